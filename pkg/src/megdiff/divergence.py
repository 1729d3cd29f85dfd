"""Sentence ranking by prediction error, divergent/convergent corpora and the
per-category analysis of MSE improvements."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluate import WordErrorTable
from .exceptions import ValidationError
from .stats import bh_fdr, t_test_two_sample
from .tensor_io import StimulusSequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SentenceScore:
    sentence_id: int
    text: str
    word_indices: tuple[int, ...]
    mean_mse: float
    rank: int
    n_cells: int

    def to_json(self) -> dict:
        d = asdict(self)
        d["word_indices"] = list(self.word_indices)
        return d


def _window_slice(window_range, n_windows) -> slice:
    if window_range is None:
        return slice(0, n_windows)
    start, stop = window_range
    if not 0 <= start < stop <= n_windows:
        raise ValidationError(f"window_range {window_range} outside [0, {n_windows}]")
    return slice(start, stop)


def sentence_scores(errors: WordErrorTable | np.ndarray, stim: StimulusSequence,
                    window_range: tuple[int, int] | None = None) -> list[SentenceScore]:
    """Mean MSE per sentence over its words and the chosen windows, ranked worst first.

    Missing cells (windows without significant channels) are left out of the
    mean. Sentences with no usable cell are dropped. Ties rank by sentence id.
    """
    mse = np.asarray(getattr(errors, "mse", errors), dtype=np.float64)
    if mse.shape[0] != len(stim):
        raise ValidationError(f"error table has {mse.shape[0]} words, stimulus {len(stim)}")
    block = mse[:, _window_slice(window_range, mse.shape[1])]
    sids = stim.sentence_ids
    tokens = stim.tokens
    rows = []
    for sid in dict.fromkeys(sids.tolist()):
        idx = np.flatnonzero(sids == sid)
        cells = block[idx]
        ok = ~np.isnan(cells)
        if not ok.any():
            logger.warning("sentence %d has no usable windows; excluded", sid)
            continue
        rows.append((sid, " ".join(tokens[i] for i in idx), tuple(idx.tolist()),
                     float(cells[ok].mean()), int(ok.sum())))
    rows.sort(key=lambda r: (-r[3], r[0]))
    return [SentenceScore(sid, text, idx, m, rank, n)
            for rank, (sid, text, idx, m, n) in enumerate(rows, 1)]


@dataclass(frozen=True)
class CorpusSplit:
    D0: tuple[SentenceScore, ...]
    D1: tuple[SentenceScore, ...]
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "D0": [{"sentence_id": s.sentence_id, "text": s.text} for s in self.D0],
            "D1": [{"sentence_id": s.sentence_id, "text": s.text} for s in self.D1],
            "provenance": self.provenance,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "CorpusSplit":
        d = json.loads(Path(path).read_text())

        def rows(items):
            return tuple(SentenceScore(int(s["sentence_id"]), s["text"], (), float("nan"), 0, 0)
                         for s in items)

        return cls(D0=rows(d["D0"]), D1=rows(d["D1"]), provenance=d.get("provenance", {}))


def extract_sets(scores: Sequence[SentenceScore], top_n: int = 100,
                 provenance: dict | None = None) -> CorpusSplit:
    """Worst-predicted ``top_n`` sentences form D0; best-predicted ``top_n`` form D1."""
    ranked = sorted(scores, key=lambda s: s.rank)
    n = top_n
    if 2 * top_n > len(ranked):
        n = len(ranked) // 2
        warnings.warn(f"only {len(ranked)} sentences; top_n reduced from {top_n} to {n}")
    prov = dict(provenance or {})
    prov.update({"top_n": n, "requested_top_n": top_n, "n_sentences": len(ranked)})
    d1 = tuple(reversed(ranked[len(ranked) - n:])) if n else ()
    return CorpusSplit(D0=tuple(ranked[:n]), D1=d1, provenance=prov)


def _partition(items: Sequence, folds: int, rng) -> list[list]:
    order = rng.permutation(len(items))
    return [[items[i] for i in sorted(part)] for part in np.array_split(order, folds)]


def hypothesis_cv_splits(split: CorpusSplit, folds: int = 3, seed: int = 0):
    """Seeded partition of D0 and D1 into ``folds`` parts each.

    Returns one ``(proposal, validation)`` pair per fold, where each element is
    a ``(d0_sentences, d1_sentences)`` tuple and validation uses part ``f``.
    """
    if folds < 2:
        raise ValidationError("need at least 2 hypothesis folds")
    if len(split.D0) < folds or len(split.D1) < folds:
        raise ValidationError(f"corpora too small for {folds} folds: "
                              f"|D0|={len(split.D0)}, |D1|={len(split.D1)}")
    rng = np.random.default_rng(seed)
    parts0 = _partition(list(split.D0), folds, rng)
    parts1 = _partition(list(split.D1), folds, rng)
    out = []
    for f in range(folds):
        prop0 = [s for g, p in enumerate(parts0) if g != f for s in p]
        prop1 = [s for g, p in enumerate(parts1) if g != f for s in p]
        out.append(((prop0, prop1), (parts0[f], parts1[f])))
    return out


def merge_annotations(raters, min_agree: int = 2) -> np.ndarray:
    """Word belongs to the category when at least ``min_agree`` raters marked it."""
    try:
        votes = np.asarray(raters)
    except ValueError:
        votes = None
    if votes is None or votes.ndim != 2:
        raise ValidationError("raters must be a (n_raters, n_words) array of equal-length vectors")
    if votes.shape[0] < min_agree:
        raise ValidationError(f"{votes.shape[0]} raters cannot reach min_agree={min_agree}")
    return votes.astype(bool).sum(axis=0) >= min_agree


@dataclass(frozen=True)
class CategoryReport:
    mean_in: np.ndarray
    mean_out: np.ndarray
    se_in: np.ndarray
    se_out: np.ndarray
    t: np.ndarray
    p: np.ndarray
    significant: np.ndarray
    n_in: int
    n_out: int
    alpha: float

    def stars(self) -> list[str]:
        out = []
        for p, sig in zip(self.p, self.significant):
            if not sig:
                out.append("")
            elif p < 0.001:
                out.append("***")
            elif p < 0.01:
                out.append("**")
            else:
                out.append("*")
        return out

    def to_csv(self, path=None) -> str:
        lines = ["window,mean_in,mean_out,se_in,se_out,t,p,significant"]
        for w in range(self.t.size):
            lines.append(
                f"{w},{self.mean_in[w]:.10g},{self.mean_out[w]:.10g},{self.se_in[w]:.10g},"
                f"{self.se_out[w]:.10g},{self.t[w]:.10g},{self.p[w]:.10g},{int(self.significant[w])}"
            )
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _sem(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / np.sqrt(x.size))


def category_improvement(delta, category_mask, alpha: float = 0.05) -> CategoryReport:
    """Per window, Student's t between in- and out-of-category words' delta-MSE, BH-FDR over windows.

    Windows whose delta is missing (NaN) for every word, or constant in both
    groups, get ``t = 0`` and ``p = 1``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    mask = np.asarray(category_mask, dtype=bool)
    if delta.ndim != 2 or mask.shape != (delta.shape[0],):
        raise ValidationError("category mask length must match the word count")
    if mask.all() or not mask.any():
        raise ValidationError("both in-category and out-of-category groups must be non-empty")
    n_win = delta.shape[1]
    fields = {k: np.full(n_win, np.nan) for k in ("mean_in", "mean_out", "se_in", "se_out")}
    t = np.zeros(n_win)
    p = np.ones(n_win)
    for w in range(n_win):
        col = delta[:, w]
        a = col[mask & ~np.isnan(col)]
        b = col[~mask & ~np.isnan(col)]
        if a.size < 2 or b.size < 2:
            continue
        fields["mean_in"][w], fields["mean_out"][w] = a.mean(), b.mean()
        fields["se_in"][w], fields["se_out"][w] = _sem(a), _sem(b)
        try:
            res = t_test_two_sample(a, b)
        except ValidationError:
            continue
        t[w], p[w] = res.statistic, res.p_value
    return CategoryReport(t=t, p=p, significant=bh_fdr(p, alpha), n_in=int(mask.sum()),
                          n_out=int((~mask).sum()), alpha=alpha, **fields)
