"""LLM-driven hypotheses about what separates divergent from convergent sentences."""

from .client import HttpLlmClient, LlmEndpointConfig, MockLlm, ResponseCache
from .pipeline import (Hypothesis, HypothesisConfig, HypothesisTable, VerifierVerdict,
                       label_permutation_p, propose, run_hypothesis_pipeline, validity_score,
                       verify, verify_many)
from .prompts import render_proposer_prompt, render_verifier_prompt

__all__ = [
    "HttpLlmClient", "LlmEndpointConfig", "MockLlm", "ResponseCache", "Hypothesis",
    "HypothesisConfig", "HypothesisTable", "VerifierVerdict", "label_permutation_p", "propose",
    "run_hypothesis_pipeline", "validity_score", "verify", "verify_many",
    "render_proposer_prompt", "render_verifier_prompt",
]
