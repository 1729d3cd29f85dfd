"""Propose hypotheses on D0 vs D1, verify them on held-out sentences, score and rank."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import hypergeom

from ..divergence import CorpusSplit, hypothesis_cv_splits
from ..exceptions import EmptyProposalError, MegdiffError, ValidationError
from .client import ResponseCache
from .prompts import (DEFAULT_EXAMPLE_HYPOTHESES, parse_bullets, parse_verdict,
                      render_proposer_prompt, render_verifier_prompt)

logger = logging.getLogger(__name__)

EXACT_LIMIT = 10**6


@dataclass(frozen=True)
class VerifierVerdict:
    hypothesis: str
    sentence: str
    verdict: bool
    raw: str
    cache_hit: bool


@dataclass(frozen=True)
class Hypothesis:
    text: str
    validity: float
    p_value: float
    rate_d0: float
    rate_d1: float
    n_folds: int = 1
    folds: tuple[int, ...] = ()


@dataclass(frozen=True)
class HypothesisConfig:
    folds: int = 3
    sample_size: int = 10
    proposal_calls: int = 1
    k_hypotheses: int = 10
    n_perm: int = 2000
    top_k: int = 10
    seed: int = 0
    example_hypotheses: tuple[str, ...] = DEFAULT_EXAMPLE_HYPOTHESES

    @classmethod
    def from_dict(cls, d) -> "HypothesisConfig":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValidationError(f"unknown hypothesis config field(s): {unknown}")
        d = dict(d)
        if "example_hypotheses" in d:
            d["example_hypotheses"] = tuple(d["example_hypotheses"])
        return cls(**d)


def _text(s) -> str:
    return s if isinstance(s, str) else s.text


def propose(d0_sample: Sequence, d1_sample: Sequence, client, k_hypotheses: int = 10,
            examples: Sequence[str] = DEFAULT_EXAMPLE_HYPOTHESES) -> list[str]:
    if not d0_sample or not d1_sample:
        raise ValidationError("proposal needs sentences from both corpora")
    prompt = render_proposer_prompt([_text(s) for s in d0_sample],
                                    [_text(s) for s in d1_sample], examples)
    found = parse_bullets(client.complete(prompt))
    if not found:
        raise EmptyProposalError("proposer reply contained no '- ' bullet lines")
    return found[:k_hypotheses]


def verify(hypothesis: str, sentence, client, cache: ResponseCache | None = None) -> VerifierVerdict:
    text = _text(sentence)
    if not hypothesis or not text:
        raise ValidationError("verify needs a non-empty hypothesis and sentence")
    key = ResponseCache.key(getattr(client, "model", ""), hypothesis, text)
    raw = cache.get(key) if cache is not None else None
    hit = raw is not None
    if not hit:
        raw = client.complete(render_verifier_prompt(hypothesis, text))
        if cache is not None:
            cache.put(key, raw)
    return VerifierVerdict(hypothesis, text, parse_verdict(raw), raw, hit)


def verify_many(hypothesis: str, sentences: Sequence, client,
                cache: ResponseCache | None = None) -> list[VerifierVerdict]:
    """Verify in parallel up to the client's concurrency; output keeps input order."""
    workers = max(1, int(getattr(client, "max_concurrency", 1)))
    if workers == 1 or len(sentences) < 2:
        return [verify(hypothesis, s, client, cache) for s in sentences]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: verify(hypothesis, s, client, cache), sentences))


def _hyp_seed(seed: int, text: str) -> list[int]:
    return [seed, int(hashlib.sha256(text.casefold().encode()).hexdigest()[:8], 16)]


def label_permutation_p(v0: Sequence[bool], v1: Sequence[bool], n_perm: int = 2000,
                        seed=0) -> float:
    """P-value for ``rate(v0) - rate(v1)`` under random relabeling of the pooled verdicts.

    Uses the exact hypergeometric tail when there are fewer than a million
    relabelings, otherwise ``n_perm`` Monte-Carlo relabelings with the add-one rule.
    """
    v0 = np.asarray(v0, dtype=bool)
    v1 = np.asarray(v1, dtype=bool)
    n0, n1 = v0.size, v1.size
    total = n0 + n1
    k_all = int(v0.sum() + v1.sum())
    k0 = int(v0.sum())
    # validity after relabeling is increasing in the D0 count, so compare counts
    if math.comb(total, n0) < EXACT_LIMIT:
        return float(min(1.0, hypergeom.sf(k0 - 1, total, k_all, n0)))
    rng = np.random.default_rng(seed)
    sims = rng.hypergeometric(k_all, total - k_all, n0, size=n_perm)
    return float((np.count_nonzero(sims >= k0) + 1) / (n_perm + 1))


def validity_score(h: str, d0_heldout: Sequence, d1_heldout: Sequence, client,
                   n_perm: int = 2000, seed: int = 0,
                   cache: ResponseCache | None = None) -> Hypothesis:
    if not d0_heldout or not d1_heldout:
        raise ValidationError("held-out pools must be non-empty")
    v0 = [v.verdict for v in verify_many(h, d0_heldout, client, cache)]
    v1 = [v.verdict for v in verify_many(h, d1_heldout, client, cache)]
    r0, r1 = float(np.mean(v0)), float(np.mean(v1))
    p = label_permutation_p(v0, v1, n_perm, _hyp_seed(seed, h))
    return Hypothesis(text=h, validity=r0 - r1, p_value=p, rate_d0=r0, rate_d1=r1)


@dataclass
class _Accumulator:
    text: str
    validities: list = field(default_factory=list)
    rates0: list = field(default_factory=list)
    rates1: list = field(default_factory=list)
    v0: list = field(default_factory=list)
    v1: list = field(default_factory=list)
    folds: list = field(default_factory=list)


@dataclass(frozen=True)
class HypothesisTable:
    rows: tuple[Hypothesis, ...]
    failures: tuple[str, ...] = ()

    def to_markdown(self) -> str:
        lines = ["| Hypothesis | Validity | p-value |", "|---|---|---|"]
        for h in self.rows:
            lines.append(f"| {h.text} | {h.validity:.3f} | {h.p_value:.3g} |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["hypothesis", "validity", "p_value", "rate_d0", "rate_d1", "n_folds"])
        for h in self.rows:
            writer.writerow([h.text, f"{h.validity:.6f}", f"{h.p_value:.6g}",
                             f"{h.rate_d0:.6f}", f"{h.rate_d1:.6f}", h.n_folds])
        return buf.getvalue()

    def save(self, directory) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        md = directory / "hypotheses.md"
        csv_path = directory / "hypotheses.csv"
        md.write_text(self.to_markdown())
        csv_path.write_text(self.to_csv())
        return md, csv_path


def run_hypothesis_pipeline(split: CorpusSplit, folds: int | None, client,
                            cfg: HypothesisConfig = HypothesisConfig(),
                            cache: ResponseCache | None = None) -> HypothesisTable:
    """Cross-validated proposal and verification.

    In each fold, hypotheses come from the proposal pools only and are
    verified on that fold's held-out pools. A hypothesis's validity is the mean
    over the folds that evaluated it; its p-value pools those folds' verdicts.
    """
    folds = folds or cfg.folds
    if cache is None:
        cache = ResponseCache()
    splits = hypothesis_cv_splits(split, folds, cfg.seed)
    acc: dict[str, _Accumulator] = {}
    failures = []
    for f, ((prop0, prop1), (val0, val1)) in enumerate(splits):
        try:
            rng = np.random.default_rng([cfg.seed, f])
            found: list[str] = []
            for _ in range(cfg.proposal_calls):
                s0 = [prop0[i] for i in sorted(rng.choice(len(prop0), min(cfg.sample_size, len(prop0)), replace=False))]
                s1 = [prop1[i] for i in sorted(rng.choice(len(prop1), min(cfg.sample_size, len(prop1)), replace=False))]
                for h in propose(s0, s1, client, cfg.k_hypotheses, cfg.example_hypotheses):
                    if h.casefold() not in {x.casefold() for x in found}:
                        found.append(h)
            for h in found:
                v0 = [v.verdict for v in verify_many(h, val0, client, cache)]
                v1 = [v.verdict for v in verify_many(h, val1, client, cache)]
                a = acc.setdefault(h.casefold(), _Accumulator(text=h))
                a.validities.append(float(np.mean(v0)) - float(np.mean(v1)))
                a.rates0.append(float(np.mean(v0)))
                a.rates1.append(float(np.mean(v1)))
                a.v0 += v0
                a.v1 += v1
                a.folds.append(f)
        except MegdiffError as exc:
            logger.error("hypothesis fold %d failed: %s", f, exc)
            failures.append(exc)
    if len(failures) == len(splits):
        summary = "; ".join(f"{type(e).__name__}: {e}" for e in failures)
        raise type(failures[-1])(f"all hypothesis folds failed: {summary}")
    rows = []
    for a in acc.values():
        rows.append(Hypothesis(
            text=a.text,
            validity=float(np.mean(a.validities)),
            p_value=label_permutation_p(a.v0, a.v1, cfg.n_perm, _hyp_seed(cfg.seed, a.text)),
            rate_d0=float(np.mean(a.rates0)),
            rate_d1=float(np.mean(a.rates1)),
            n_folds=len(a.folds),
            folds=tuple(a.folds),
        ))
    rows.sort(key=lambda h: (-h.validity, h.p_value, h.text.casefold()))
    return HypothesisTable(rows=tuple(rows[: cfg.top_k]),
                           failures=tuple(str(e) for e in failures))
