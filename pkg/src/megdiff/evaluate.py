"""Correlation maps, significance masks and per-word prediction error."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import special
from ._validation import check_same_shape
from .exceptions import ValidationError

logger = logging.getLogger(__name__)

SIGNIFICANCE_METHODS = ("analytic-t", "block-permutation")


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _degenerate(ss: np.ndarray, scale: np.ndarray, n: int) -> np.ndarray:
    # sum of squares indistinguishable from rounding noise of a constant series
    return ss <= (n * np.finfo(np.float64).eps * scale) ** 2


def pearson(x, y) -> float:
    """Sample Pearson correlation; ``nan`` when either series is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("pearson needs two 1-D series of equal length")
    if x.size < 3:
        raise ValidationError("pearson needs at least 3 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = xc @ xc
    syy = yc @ yc
    if _degenerate(sxx, np.abs(x).max(), x.size) or _degenerate(syy, np.abs(y).max(), y.size):
        return float("nan")
    r = (xc @ yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def _column_corr(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Correlation along axis 0 for every trailing index, with a validity mask."""
    n = a.shape[0]
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    saa = np.einsum("n...,n...->...", ac, ac)
    sbb = np.einsum("n...,n...->...", bc, bc)
    sab = np.einsum("n...,n...->...", ac, bc)
    valid = ~(_degenerate(saa, np.abs(a).max(axis=0), n) | _degenerate(sbb, np.abs(b).max(axis=0), n))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(valid, sab / np.sqrt(saa * sbb), np.nan)
    return np.clip(r, -1.0, 1.0), valid


@dataclass(frozen=True)
class CorrelationMap:
    """Pearson r per ``(channel, window)`` computed across words."""

    r: np.ndarray
    n_words: int
    valid: np.ndarray
    pred: np.ndarray | None = field(default=None, repr=False, compare=False)
    actual: np.ndarray | None = field(default=None, repr=False, compare=False)

    def mean(self) -> float:
        """Mean over valid cells; undefined cells are excluded, not zeroed."""
        if not self.valid.any():
            return float("nan")
        return float(self.r[self.valid].mean())

    def window_mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.nanmean(np.where(self.valid, self.r, np.nan), axis=0)


def correlation_map(pred, actual) -> CorrelationMap:
    P = _as_array(pred)
    A = _as_array(actual)
    check_same_shape(P, A, names=("pred", "actual"))
    if P.ndim != 3:
        raise ValidationError(f"expected (n_words, n_channels, n_windows), got {P.shape}")
    r, valid = _column_corr(P, A)
    return CorrelationMap(r=r, n_words=P.shape[0], valid=valid, pred=P, actual=A)


@dataclass(frozen=True)
class ChannelMask:
    significant: np.ndarray
    alpha: float
    method: str
    p_values: np.ndarray
    collapsed: bool = False

    def per_window_counts(self) -> np.ndarray:
        return self.significant.sum(axis=0)

    def collapse(self) -> "ChannelMask":
        """A channel counts in every window once it is significant in any window."""
        any_window = self.significant.any(axis=1, keepdims=True)
        sig = np.broadcast_to(any_window, self.significant.shape).copy()
        return ChannelMask(sig, self.alpha, self.method, self.p_values, collapsed=True)


def _analytic_p(r: np.ndarray, n: int) -> np.ndarray:
    df = n - 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t = r * np.sqrt(df / (1.0 - r * r))
    t = np.where(r >= 1.0, np.inf, np.where(r <= -1.0, -np.inf, t))
    return special.student_t_sf(t, df)


def _circular_shift_p(P, A, valid, n_perm, seed) -> np.ndarray:
    n, c, w = P.shape
    p = np.full((c, w), np.nan)
    zp = P - P.mean(axis=0)
    za = A - A.mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        zp /= np.sqrt((zp * zp).sum(axis=0))
        za /= np.sqrt((za * za).sum(axis=0))
    for t in range(w):
        # all circular lags at once: cc[k] = sum_i zp[i] * za[(i + k) % n]
        fp = np.fft.rfft(zp[:, :, t], axis=0)
        fa = np.fft.rfft(za[:, :, t], axis=0)
        cc = np.fft.irfft(np.conj(fp) * fa, n=n, axis=0)
        for ch in range(c):
            if not valid[ch, t]:
                continue
            rng = np.random.default_rng([seed, ch, t])
            shifts = rng.integers(1, n, size=n_perm)
            observed = cc[0, ch]
            count = np.count_nonzero(cc[shifts, ch] >= observed)
            p[ch, t] = (count + 1) / (n_perm + 1)
    return p


def significant_channels(
    cmap: CorrelationMap,
    alpha: float = 0.001,
    method: str = "analytic-t",
    n_perm: int = 1000,
    seed: int = 0,
) -> ChannelMask:
    """One-sided test of positive correlation for every ``(channel, window)`` cell.

    ``analytic-t`` uses ``t = r sqrt((n-2)/(1-r^2))`` with ``n-2`` degrees of
    freedom; it assumes independent words, which autocorrelated responses
    violate. ``block-permutation`` compares against circular shifts of the word
    axis, which keep that autocorrelation intact.
    """
    if method not in SIGNIFICANCE_METHODS:
        raise ValidationError(f"unknown significance method {method!r}; use one of {SIGNIFICANCE_METHODS}")
    n = cmap.n_words
    if n < 4:
        raise ValidationError("significance testing needs at least 4 words")
    if method == "analytic-t":
        logger.info("analytic-t significance assumes independent words; "
                    "temporal autocorrelation inflates it")
        p = _analytic_p(np.where(cmap.valid, cmap.r, 0.0), n)
        p = np.where(cmap.valid, p, np.nan)
    else:
        if cmap.pred is None or cmap.actual is None:
            raise ValidationError("block-permutation needs a map built by correlation_map")
        p = _circular_shift_p(cmap.pred, cmap.actual, cmap.valid, n_perm, seed)
    sig = cmap.valid & (np.nan_to_num(p, nan=1.0) < alpha)
    return ChannelMask(significant=sig, alpha=alpha, method=method, p_values=p)


@dataclass(frozen=True)
class WordErrorTable:
    """Per-word, per-window MSE over significant channels; NaN marks windows with no channels."""

    mse: np.ndarray
    channel_counts: np.ndarray

    @property
    def missing_windows(self) -> np.ndarray:
        return self.channel_counts == 0


def word_mse(pred, actual, mask: ChannelMask) -> WordErrorTable:
    """``MSE(w) = mean over significant channels of (pred - actual)^2``, per window."""
    P = _as_array(pred)
    A = _as_array(actual)
    check_same_shape(P, A, names=("pred", "actual"))
    sig = _mask_array(mask)
    if sig.shape != P.shape[1:]:
        raise ValidationError(f"mask shape {sig.shape} does not match {P.shape[1:]}")
    counts = sig.sum(axis=0)
    sq = (P - A) ** 2
    total = np.einsum("nct,ct->nt", sq, sig.astype(np.float64))
    with np.errstate(invalid="ignore", divide="ignore"):
        mse = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    if (counts == 0).any():
        logger.info("windows without significant channels flagged missing: %s",
                    np.flatnonzero(counts == 0).tolist())
    return WordErrorTable(mse=mse, channel_counts=counts)


def _mask_array(mask) -> np.ndarray:
    return np.asarray(mask.significant if isinstance(mask, ChannelMask) else mask, dtype=bool)


def delta_mse(pred_a, pred_b, actual, mask: ChannelMask, mask_b: ChannelMask | None = None) -> np.ndarray:
    """``MSE_a - MSE_b`` per word and window over one shared mask.

    Positive values mean ``b`` predicts that word better. The mask should be
    computed once (from the reference model) and reused for both; passing a
    different ``mask_b`` is an error.
    """
    check_same_shape(_as_array(pred_a), _as_array(pred_b), _as_array(actual),
                     names=("pred_a", "pred_b", "actual"))
    if mask_b is not None and not np.array_equal(_mask_array(mask), _mask_array(mask_b)):
        raise ValidationError("delta_mse needs one shared mask; the two masks differ")
    a = word_mse(pred_a, actual, mask)
    b = word_mse(pred_b, actual, mask)
    return a.mse - b.mse
