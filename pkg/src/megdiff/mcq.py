"""Multiple-choice scoring from per-token logits: option scores, softmax
cross-entropy loss and accuracy."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MCQItem:
    """One question with its options and per-option token logits.

    ``stem_lengths[i]`` (optional) is the number of leading logits of option
    ``i`` that belong to the stem; it is only needed for option-only scoring.
    """

    stem: str
    options: tuple[str, ...]
    correct_index: int
    logits: tuple[tuple[float, ...], ...]
    stem_lengths: tuple[int, ...] | None = None
    item_id: str | None = None

    def __post_init__(self):
        if len(self.options) < 2:
            raise ValidationError("an item needs at least 2 options")
        if len(self.logits) != len(self.options):
            raise ValidationError("one logit sequence per option is required")
        if not 0 <= self.correct_index < len(self.options):
            raise ValidationError(f"correct_index {self.correct_index} out of range")
        if any(len(seq) == 0 for seq in self.logits):
            raise ValidationError("every option needs at least one logit")

    @classmethod
    def from_json(cls, d: dict, item_id=None) -> "MCQItem":
        return cls(
            stem=d.get("stem", ""),
            options=tuple(d["options"]),
            correct_index=int(d["correct_index"]),
            logits=tuple(tuple(float(v) for v in seq) for seq in d["logits"]),
            stem_lengths=tuple(d["stem_lengths"]) if "stem_lengths" in d else None,
            item_id=d.get("id", item_id),
        )

    def scores(self, option_only: bool = False) -> list[float]:
        out = []
        for i, seq in enumerate(self.logits):
            if option_only:
                if self.stem_lengths is None:
                    raise ValidationError("option-only scoring needs stem_lengths")
                seq = seq[self.stem_lengths[i]:]
            out.append(option_score(seq))
        return out


def option_score(logits: Sequence[float]) -> float:
    """Sum of the logits, accumulated left to right."""
    if len(logits) == 0:
        raise ValidationError("cannot score an empty logit sequence")
    total = 0.0
    for v in logits:
        total += float(v)
    return total


def mcq_loss(scores: Sequence[float], correct_index: int) -> float:
    """Cross-entropy of ``softmax(scores)`` against the one-hot correct option."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise ValidationError("need at least 2 option scores")
    if not 0 <= correct_index < s.size:
        raise ValidationError(f"correct_index {correct_index} out of range for {s.size} options")
    shifted = s - s.max()
    return float(max(0.0, logsumexp(shifted) - shifted[correct_index]))


def mcq_accuracy(items: Sequence, option_only: bool = False) -> float:
    """Fraction of items whose highest score is the correct option; ties count as wrong.

    ``items`` may hold :class:`MCQItem` objects or ``(scores, correct_index)`` pairs.
    """
    if len(items) == 0:
        raise ValidationError("accuracy of an empty item list is undefined")
    hits = ties = 0
    for item in items:
        if isinstance(item, MCQItem):
            scores, correct = item.scores(option_only), item.correct_index
        else:
            scores, correct = item
        scores = np.asarray(scores, dtype=np.float64)
        best = scores.max()
        winners = np.flatnonzero(scores == best)
        if winners.size > 1:
            ties += 1
            continue
        hits += int(winners[0] == correct)
    if ties:
        logger.warning("%d item(s) with tied top scores counted as wrong", ties)
    return hits / len(items)


def load_items(path) -> list[MCQItem]:
    items = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            if line.strip():
                items.append(MCQItem.from_json(json.loads(line), item_id=str(lineno)))
    return items


def score_table(items: Sequence[MCQItem], option_only: bool = False) -> str:
    """CSV with one row per item: id, per-option scores, loss, correct flag."""
    width = max(len(it.options) for it in items)
    header = ["item_id"] + [f"score_{i}" for i in range(width)] + ["loss", "correct"]
    lines = [",".join(header)]
    for n, it in enumerate(items):
        scores = it.scores(option_only)
        cells = [f"{v:.10g}" for v in scores] + [""] * (width - len(scores))
        arr = np.asarray(scores)
        correct = int(np.count_nonzero(arr == arr.max()) == 1 and int(arr.argmax()) == it.correct_index)
        loss = mcq_loss(scores, it.correct_index)
        lines.append(",".join([it.item_id or str(n)] + cells + [f"{loss:.10g}", str(correct)]))
    return "\n".join(lines) + "\n"
