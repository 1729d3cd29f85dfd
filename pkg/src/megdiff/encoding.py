"""Ridge encoding models from LM embeddings to brain responses.

The outer loop splits words into contiguous folds (responses are
autocorrelated in time, so shuffled folds would leak). Within each outer
training set a second contiguous split selects the ridge penalty.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import as_features, as_targets, check_lambda_grid
from .exceptions import RankDeficiencyError, ValidationError
from .tensor_io import EmbeddingMatrix, ResponseTensor

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = tuple(np.logspace(-2, 6, 10).tolist())


@dataclass(frozen=True)
class FoldSpec:
    """Contiguous, ordered partition of ``range(n_items)`` into ``k`` blocks."""

    n_items: int
    k: int
    ranges: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return self.k

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for i in range(self.k):
            yield self.train_indices(i), self.test_indices(i)

    def test_indices(self, i: int) -> np.ndarray:
        start, stop = self.ranges[i]
        return np.arange(start, stop)

    def train_indices(self, i: int) -> np.ndarray:
        start, stop = self.ranges[i]
        return np.concatenate([np.arange(0, start), np.arange(stop, self.n_items)])

    def sizes(self) -> list[int]:
        return [b - a for a, b in self.ranges]

    def split(self, X=None, y=None, groups=None):
        """sklearn CV-splitter protocol."""
        return iter(self)

    def get_n_splits(self, X=None, y=None, groups=None) -> int:
        return self.k


def contiguous_folds(n_items: int, k: int) -> FoldSpec:
    """Split ``n_items`` into ``k`` contiguous blocks; earlier blocks take the remainder."""
    if k < 2 or k > n_items:
        raise ValidationError(f"need 2 <= k <= n_items, got k={k}, n_items={n_items}")
    base, extra = divmod(n_items, k)
    ranges = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        ranges.append((start, start + size))
        start += size
    return FoldSpec(n_items=n_items, k=k, ranges=tuple(ranges))


class _CenteredSVD:
    """Thin SVD of a column-centered design, reused across penalties and targets."""

    def __init__(self, X: np.ndarray):
        self.x_mean = X.mean(axis=0)
        Xc = X - self.x_mean
        self.n, self.d = Xc.shape
        self.U, self.s, self.Vt = np.linalg.svd(Xc, full_matrices=False)
        tol = max(self.n, self.d) * np.finfo(np.float64).eps * (self.s[0] if self.s.size else 0.0)
        self.rank = int(np.sum(self.s > tol))

    def project(self, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y_mean = Y.mean(axis=0)
        return self.U.T @ (Y - y_mean), y_mean

    def coef(self, UtY: np.ndarray, lam: float) -> np.ndarray:
        if lam == 0 and self.rank < self.d:
            raise RankDeficiencyError(
                f"centered design has rank {self.rank} < {self.d} features; use lambda > 0"
            )
        s = self.s
        with np.errstate(divide="ignore", invalid="ignore"):
            shrink = np.where(s > 0, s / (s * s + lam), 0.0)
        return self.Vt.T @ (shrink[:, None] * UtY)


@dataclass(frozen=True)
class RidgeModel:
    W: np.ndarray
    b: np.ndarray
    lam: float | np.ndarray

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.W + self.b


def fit_ridge(X, Y, lam: float) -> RidgeModel:
    """Closed-form ridge on centered data; the intercept is not penalized.

    Solves ``W = (Xc'Xc + lam I)^-1 Xc'Yc`` and ``b = mean(Y) - mean(X) @ W``
    for every column of ``Y`` with one shared decomposition of ``X``.
    """
    X = as_features(X)
    Y, _ = as_targets(Y)
    if Y.shape[0] != X.shape[0]:
        raise ValidationError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if not lam >= 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    svd = _CenteredSVD(X)
    UtY, y_mean = svd.project(Y)
    W = svd.coef(UtY, float(lam))
    return RidgeModel(W=W, b=y_mean - svd.x_mean @ W, lam=float(lam))


class RidgeEncoder(RegressorMixin, BaseEstimator):
    """Fixed-penalty multi-output ridge regression.

    Parameters
    ----------
    alpha : float, default=1.0
        Ridge penalty ``lambda``. Zero requires a full-column-rank centered design.
    """

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y):
        model = fit_ridge(X, y, self.alpha)
        self.coef_ = model.W
        self.intercept_ = model.b
        self.n_features_in_ = self.coef_.shape[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = as_features(X, min_samples=1)
        return X @ self.coef_ + self.intercept_


class ContiguousRidgeCV(RegressorMixin, BaseEstimator):
    """Ridge regression with the penalty chosen by contiguous k-fold CV.

    Validation MSE is averaged over folds. With ``alpha_per_target=False`` the
    penalty minimizing MSE averaged over all targets is shared; otherwise each
    target keeps its own minimizer. Ties go to the smaller penalty.

    Parameters
    ----------
    alphas : sequence of float
        Strictly increasing penalty grid.
    cv : int, default=5
        Number of contiguous inner folds.
    alpha_per_target : bool, default=False
        Select one penalty per output column.

    Attributes
    ----------
    alpha_ : float or ndarray of shape (n_targets,)
    cv_mse_ : ndarray of shape (n_alphas, n_targets)
    coef_ : ndarray of shape (n_features, n_targets)
    intercept_ : ndarray of shape (n_targets,)
    """

    def __init__(self, alphas=DEFAULT_LAMBDA_GRID, cv=5, alpha_per_target=False):
        self.alphas = alphas
        self.cv = cv
        self.alpha_per_target = alpha_per_target

    def fit(self, X, y):
        X = as_features(X)
        Y, _ = as_targets(y)
        grid = check_lambda_grid(self.alphas)
        folds = contiguous_folds(X.shape[0], self.cv)
        mse = np.zeros((grid.size, Y.shape[1]))
        for train, val in folds:
            svd = _CenteredSVD(X[train])
            UtY, y_mean = svd.project(Y[train])
            Xv = X[val] - svd.x_mean
            Yv = Y[val] - y_mean
            for j, lam in enumerate(grid):
                resid = Xv @ svd.coef(UtY, lam) - Yv
                mse[j] += np.mean(resid * resid, axis=0)
        mse /= folds.k
        self.cv_mse_ = mse

        svd = _CenteredSVD(X)
        UtY, y_mean = svd.project(Y)
        if self.alpha_per_target:
            best = np.argmin(mse, axis=0)
            W = np.empty((X.shape[1], Y.shape[1]))
            for j in np.unique(best):
                cols = best == j
                W[:, cols] = svd.coef(UtY[:, cols], grid[j])
            self.alpha_ = grid[best]
        else:
            j = int(np.argmin(mse.mean(axis=1)))
            W = svd.coef(UtY, grid[j])
            self.alpha_ = float(grid[j])
        self.coef_ = W
        self.intercept_ = y_mean - svd.x_mean @ W
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = as_features(X, min_samples=1)
        return X @ self.coef_ + self.intercept_


@dataclass(frozen=True)
class EncodeConfig:
    k_outer: int = 10
    k_inner: int = 5
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    per_target_lambda: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        if self.k_outer < 2:
            raise ValidationError("k_outer must be >= 2")
        if self.k_inner < 2:
            raise ValidationError("k_inner must be >= 2")
        check_lambda_grid(self.lambda_grid)
        if any(v <= 0 for v in self.lambda_grid):
            raise ValidationError("lambda_grid values must be positive")

    @classmethod
    def from_dict(cls, d) -> "EncodeConfig":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValidationError(f"unknown encode config field(s): {unknown}")
        return cls(**d)


@dataclass(frozen=True)
class PredictionTensor:
    """Concatenated held-out predictions plus the per-fold penalty record."""

    data: np.ndarray
    folds: FoldSpec
    lambdas: tuple = ()
    per_target_lambda: bool = False
    layer_id: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def shape(self):
        return self.data.shape

    def manifest(self) -> dict:
        lams = []
        for lam in self.lambdas:
            lams.append(float(lam) if np.ndim(lam) == 0 else np.asarray(lam).tolist())
        return {
            "layer_id": self.layer_id,
            "k_outer": self.folds.k,
            "fold_ranges": [list(r) for r in self.folds.ranges],
            "lambda_selection": "per_target" if self.per_target_lambda else "shared",
            "lambdas": lams,
        }


def nested_cv_predict(L, M, cfg: EncodeConfig = EncodeConfig()) -> PredictionTensor:
    """Held-out predictions of ``M`` from ``L`` with nested contiguous CV.

    Each outer fold's model never sees that fold's responses; predictions are
    written back in original word order.
    """
    layer_id = L.layer_id if isinstance(L, EmbeddingMatrix) else None
    X = as_features(L, name="L")
    Y, trailing = as_targets(M, name="M")
    if X.shape[0] != Y.shape[0]:
        raise ValidationError(f"embeddings have {X.shape[0]} words, responses {Y.shape[0]}")
    outer = contiguous_folds(X.shape[0], cfg.k_outer)
    smallest_train = X.shape[0] - max(outer.sizes())
    if smallest_train < cfg.k_inner:
        raise ValidationError(
            f"outer training sets ({smallest_train} items) smaller than k_inner={cfg.k_inner}"
        )
    template = ContiguousRidgeCV(
        alphas=cfg.lambda_grid, cv=cfg.k_inner, alpha_per_target=cfg.per_target_lambda
    )
    pred = np.empty_like(Y)
    lambdas = []
    for i, (train, test) in enumerate(outer):
        est = clone(template).fit(X[train], Y[train])
        pred[test] = est.predict(X[test])
        lambdas.append(est.alpha_)
        logger.debug("outer fold %d: lambda=%s", i, est.alpha_)
    return PredictionTensor(
        data=pred.reshape((X.shape[0],) + trailing),
        folds=outer,
        lambdas=tuple(lambdas),
        per_target_lambda=cfg.per_target_lambda,
        layer_id=layer_id,
    )


@dataclass(frozen=True)
class LayerSweep:
    mean_r: dict
    best_layer_id: int
    predictions: dict

    def __iter__(self):
        # unpacks as (per-layer mean r, best layer id)
        return iter((self.mean_r, self.best_layer_id))


def layer_sweep(layers: Sequence[EmbeddingMatrix], M, cfg: EncodeConfig = EncodeConfig()) -> LayerSweep:
    """Run :func:`nested_cv_predict` per layer and pick the best by mean correlation.

    The score of a layer is the Pearson r per ``(channel, window)`` across
    words, averaged over all valid cells. Ties go to the lowest layer id.
    """
    from .evaluate import correlation_map

    if not layers:
        raise ValidationError("layer_sweep needs at least one layer")
    n_words = {emb.n_words for emb in layers}
    if len(n_words) != 1:
        raise ValidationError(f"layers disagree on word count: {sorted(n_words)}")
    ids = [emb.layer_id for emb in layers]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate layer ids: {ids}")
    actual = M if isinstance(M, ResponseTensor) else ResponseTensor(M)
    mean_r, preds = {}, {}
    for emb in layers:
        pred = nested_cv_predict(emb, actual, cfg)
        cmap = correlation_map(pred, actual)
        mean_r[emb.layer_id] = cmap.mean()
        preds[emb.layer_id] = pred
    def rank_key(lid):
        r = mean_r[lid]
        return (-r if np.isfinite(r) else np.inf, lid)

    best = min(mean_r, key=rank_key)
    return LayerSweep(mean_r=mean_r, best_layer_id=best, predictions=preds)
