"""Cross-subject denoising and repetition averaging.

Every target subject is re-estimated from each other subject through a
per-window linear map (source channels -> target channels, fitted across
words). The estimates are averaged over sources, then over targets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_responses, check_same_shape
from .encoding import DEFAULT_LAMBDA_GRID, ContiguousRidgeCV, fit_ridge
from .exceptions import InsufficientSubjectsError, ValidationError
from .tensor_io import ResponseTensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CrossSubjectMap:
    """Per-window ridge maps; ``W[w]`` is ``(n_channels_source, n_channels_target)``."""

    W: np.ndarray
    b: np.ndarray
    lam: float

    def predict(self, source) -> np.ndarray:
        S = as_responses(source, name="source")
        return np.einsum("ncw,wcd->ndw", S, self.W) + self.b.T[None]


def _check_pair(source, target):
    S = as_responses(source, name="source")
    T = as_responses(target, name="target")
    check_same_shape(S, T, names=("source", "target"))
    return S, T


def fit_cross_subject_map(source, target, lam: float) -> CrossSubjectMap:
    S, T = _check_pair(source, target)
    if not lam >= 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    n_win = S.shape[2]
    c = S.shape[1]
    W = np.empty((n_win, c, c))
    b = np.empty((n_win, c))
    for w in range(n_win):
        model = fit_ridge(S[:, :, w], T[:, :, w], lam)
        W[w], b[w] = model.W, model.b
    return CrossSubjectMap(W=W, b=b, lam=float(lam))


def select_map_lambda(source, target, grid=DEFAULT_LAMBDA_GRID, cv: int = 5) -> float:
    """Penalty minimizing contiguous-CV MSE pooled over all windows and channels."""
    S, T = _check_pair(source, target)
    total = None
    for w in range(S.shape[2]):
        est = ContiguousRidgeCV(alphas=grid, cv=cv).fit(S[:, :, w], T[:, :, w])
        per_alpha = est.cv_mse_.mean(axis=1)
        total = per_alpha if total is None else total + per_alpha
    return float(np.asarray(grid)[int(np.argmin(total))])


def _subject_arrays(group) -> list[np.ndarray]:
    arrays = [as_responses(s, name=f"subject {i}") for i, s in enumerate(group)]
    if len(arrays) < 2:
        raise InsufficientSubjectsError(f"cross-subject denoising needs >= 2 subjects, got {len(arrays)}")
    check_same_shape(*arrays, names=[f"subject {i}" for i in range(len(arrays))])
    return arrays


def denoise_group(group: Sequence, lam: float | None = None, grid=DEFAULT_LAMBDA_GRID,
                  cv: int = 5) -> ResponseTensor:
    """Aggregate denoised responses of a subject group.

    ``lam=None`` selects a penalty per (target, source) pair by contiguous CV.
    Maps are fitted on the same words they predict.
    """
    return CrossSubjectDenoiser(alpha=lam, alphas=grid, cv=cv).fit_transform(group)


class CrossSubjectDenoiser(TransformerMixin, BaseEstimator):
    """Estimator wrapper around cross-subject denoising.

    ``fit`` learns one :class:`CrossSubjectMap` per ordered (target, source)
    pair; ``transform`` applies them to a group with the same subject order.

    Parameters
    ----------
    alpha : float or None, default=None
        Fixed ridge penalty for every map; None selects it by CV.
    alphas : sequence of float
        Penalty grid for CV selection.
    cv : int, default=5
        Contiguous folds for CV selection.
    """

    def __init__(self, alpha=None, alphas=DEFAULT_LAMBDA_GRID, cv=5):
        self.alpha = alpha
        self.alphas = alphas
        self.cv = cv

    def fit(self, X, y=None):
        arrays = _subject_arrays(X)
        self.maps_ = {}
        for t, target in enumerate(arrays):
            for s, source in enumerate(arrays):
                if s == t:
                    continue
                lam = self.alpha
                if lam is None:
                    lam = select_map_lambda(source, target, self.alphas, self.cv)
                self.maps_[t, s] = fit_cross_subject_map(source, target, lam)
        self.n_subjects_ = len(arrays)
        self.shape_ = arrays[0].shape
        return self

    def transform(self, X) -> ResponseTensor:
        check_is_fitted(self, "maps_")
        arrays = _subject_arrays(X)
        if len(arrays) != self.n_subjects_:
            raise ValidationError(f"fitted on {self.n_subjects_} subjects, got {len(arrays)}")
        n = len(arrays)
        per_target = []
        for t in range(n):
            est = sum(self.maps_[t, s].predict(arrays[s]) for s in range(n) if s != t)
            per_target.append(est / (n - 1))
        out = sum(per_target) / n
        template = X[0]
        if isinstance(template, ResponseTensor):
            return ResponseTensor(out, window_ms=template.window_ms,
                                  window_offsets_ms=template.window_offsets_ms)
        return ResponseTensor(out)


def average_repetitions(reps: Sequence) -> ResponseTensor:
    """Element-wise mean of repeated recordings of the same stimulus."""
    if len(reps) < 1:
        raise ValidationError("need at least one repetition")
    arrays = [as_responses(r, name=f"repetition {i}") for i, r in enumerate(reps)]
    check_same_shape(*arrays, names=[f"repetition {i}" for i in range(len(arrays))])
    out = np.mean(np.stack(arrays), axis=0)
    template = reps[0]
    if isinstance(template, ResponseTensor):
        return ResponseTensor(out, window_ms=template.window_ms,
                              window_offsets_ms=template.window_offsets_ms)
    return ResponseTensor(out)
