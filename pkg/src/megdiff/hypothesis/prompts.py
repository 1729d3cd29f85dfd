"""Proposer and verifier prompt templates and response parsing."""

from __future__ import annotations

from typing import Sequence

PROPOSER_TEMPLATE = """{A_block}

{B_block}

The dataset includes two chapters from "Harry Potter and the Sorcerer's Stone". The two groups are generated based on the difference between language model and human responses to these sentences. The Group A snippets sentences where language models and humans show divergent responses, while the Group B snippets sentences where language models and humans show similar responses.

I am a literary analyst investigating the characteristics of words. My goal is to figure out which sentences induce different responses for language models and human responses.

Please write a list of hypotheses about the datapoints from Group A (listed by bullet points "-"). Each hypothesis should be formatted as a sentence fragment. Here are three examples.

- "{example_hypothesis_1}"

- "{example_hypothesis_2}"

- "{example_hypothesis_3}"

Based on the two sentence groups (A and B) from the above, more sentences in Group A ..."""

VERIFIER_TEMPLATE = """Check whether the TEXT satisfies a PROPERTY. Respond with Yes or No. When uncertain, output No.

Now complete the following example -

input: PROPERTY: {hypothesis}

TEXT: {text}

output:"""

DEFAULT_EXAMPLE_HYPOTHESES = (
    "describe a character's movement through a building",
    "contain direct speech between two people",
    "mention an object being handled",
)

_QUOTES = "\"'“”‘’`"


def render_block(label: str, sentences: Sequence[str]) -> str:
    lines = [f"Group {label} snippets:"]
    lines += [f"{i}. {s}" for i, s in enumerate(sentences, 1)]
    return "\n".join(lines)


def render_proposer_prompt(group_a: Sequence[str], group_b: Sequence[str],
                           examples: Sequence[str] = DEFAULT_EXAMPLE_HYPOTHESES) -> str:
    if len(examples) != 3:
        raise ValueError("the proposer prompt takes exactly three example hypotheses")
    return PROPOSER_TEMPLATE.format(
        A_block=render_block("A", group_a),
        B_block=render_block("B", group_b),
        example_hypothesis_1=examples[0],
        example_hypothesis_2=examples[1],
        example_hypothesis_3=examples[2],
    )


def render_verifier_prompt(hypothesis: str, text: str) -> str:
    return VERIFIER_TEMPLATE.format(hypothesis=hypothesis, text=text)


def parse_bullets(response: str) -> list[str]:
    """Fragments from lines starting with ``- ``, de-duplicated case-insensitively."""
    seen = set()
    out = []
    for line in response.splitlines():
        line = line.strip()
        if not line.startswith("- "):
            continue
        frag = line[2:].strip().strip(_QUOTES).strip()
        key = frag.casefold()
        if frag and key not in seen:
            seen.add(key)
            out.append(frag)
    return out


def parse_verdict(response: str) -> bool:
    """Yes only when the reply begins with "yes"; anything else counts as No."""
    return response.strip().casefold().startswith("yes")
