"""Hypothesis tests: permutation comparison of two predictors, BH-FDR,
Student's t, chi-square independence, exact binomial and Krippendorff's alpha."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _permute, special
from .exceptions import UndefinedCorrelationError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    df: float | None = None
    sidedness: str = "two-sided"
    log_p_value: float | None = None
    extra: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def to_json(self) -> dict:
        out = asdict(self)
        if not out["extra"]:
            out.pop("extra")
        if out["log_p_value"] is None:
            out.pop("log_p_value")
        return out


def _clip_p(p):
    # p-values live in (0, 1]
    return min(1.0, max(float(p), np.nextafter(0.0, 1.0)))


# -- permutation test ---------------------------------------------------------

def _standardize(x: np.ndarray, name: str) -> np.ndarray:
    xc = x - x.mean(axis=0)
    ss = np.sqrt((xc * xc).sum(axis=0))
    scale = np.abs(x).max(axis=0)
    bad = ss <= x.shape[0] * np.finfo(np.float64).eps * scale
    if np.any(bad):
        raise UndefinedCorrelationError(f"{name} is constant in {int(np.sum(bad))} cell(s)")
    return xc / ss


def permutation_indices(n: int, n_perm: int, seed, scheme: str = "uniform") -> np.ndarray:
    """Rows of word-axis permutations drawn from ``default_rng(seed)``.

    ``uniform`` draws uniform random permutations; ``circular`` draws circular
    shifts by 1..n-1 positions.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((n_perm, n), dtype=np.int32)
    if scheme == "uniform":
        for i in range(n_perm):
            out[i] = rng.permutation(n)
    elif scheme == "circular":
        shifts = rng.integers(1, n, size=n_perm)
        base = np.arange(n)
        for i, s in enumerate(shifts):
            out[i] = (base + s) % n
    else:
        raise ValidationError(f"unknown permutation scheme {scheme!r}")
    return out


@dataclass(frozen=True)
class PermutationBatchResult:
    """Observed ``corr(D,P1) - corr(D,P2)`` and both one-sided p-values per cell.

    ``p_greater`` is the add-one p-value for "P1 correlates better than P2";
    ``p_less`` is the same test with the roles of P1 and P2 exchanged.
    """

    statistic: np.ndarray
    p_greater: np.ndarray
    p_less: np.ndarray
    n_perm: int


def permutation_test_batch(D, P1, P2, n_perm: int = 10000, seed=0, mode: str = "shared",
                           scheme: str = "uniform", threads=None) -> PermutationBatchResult:
    """Run the permutation comparison for every trailing cell of ``(N, ...)`` arrays.

    In ``shared`` mode all cells use the same permutation draws (the same
    draws :func:`permutation_test` makes for that seed). In ``independent``
    mode each cell draws from ``default_rng([seed, cell_index])``.
    """
    D = np.asarray(D, dtype=np.float64)
    P1 = np.asarray(P1, dtype=np.float64)
    P2 = np.asarray(P2, dtype=np.float64)
    if not (D.shape == P1.shape == P2.shape):
        raise ValidationError(f"shape mismatch: D {D.shape}, P1 {P1.shape}, P2 {P2.shape}")
    if D.ndim == 1:
        D, P1, P2 = D[:, None], P1[:, None], P2[:, None]
    n = D.shape[0]
    if n < 3:
        raise ValidationError("permutation test needs at least 3 words")
    if n_perm < 1:
        raise ValidationError("n_perm must be >= 1")
    trailing = D.shape[1:]
    zd = np.ascontiguousarray(_standardize(D.reshape(n, -1), "D"))
    diff = np.ascontiguousarray(
        _standardize(P1.reshape(n, -1), "P1") - _standardize(P2.reshape(n, -1), "P2")
    )
    _permute.set_threads(threads)
    observed = _permute.column_dots(zd, diff)
    if mode == "shared":
        perms = permutation_indices(n, n_perm, seed, scheme)
        greater, less = _permute.permutation_counts(
            zd, diff, observed, perms, _permute.CELL_BLOCK, _permute.PERM_BLOCK
        )
    elif mode == "independent":
        greater = np.empty(zd.shape[1], np.int64)
        less = np.empty(zd.shape[1], np.int64)
        for j in range(zd.shape[1]):
            perms = permutation_indices(n, n_perm, [seed, j], scheme)
            g, l_ = _permute.permutation_counts(
                zd[:, j:j + 1].copy(), diff[:, j:j + 1].copy(), observed[j:j + 1], perms,
                1, _permute.PERM_BLOCK,
            )
            greater[j], less[j] = g[0], l_[0]
    else:
        raise ValidationError(f"unknown mode {mode!r}; use 'shared' or 'independent'")
    return PermutationBatchResult(
        statistic=observed.reshape(trailing),
        p_greater=((greater + 1) / (n_perm + 1)).reshape(trailing),
        p_less=((less + 1) / (n_perm + 1)).reshape(trailing),
        n_perm=n_perm,
    )


def permutation_test(D, P1, P2, n_perm: int = 10000, seed=0, scheme: str = "uniform") -> TestResult:
    """Empirical p-value that ``P1`` tracks ``D`` better than ``P2`` does.

    ``X = corr(D, P1) - corr(D, P2)``; ``D`` is permuted ``n_perm`` times and
    ``Counter`` counts permuted statistics strictly greater than ``X``. The
    p-value is ``(Counter + 1) / (n_perm + 1)``.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 1:
        raise ValidationError("permutation_test takes 1-D series; use permutation_test_batch")
    res = permutation_test_batch(D, P1, P2, n_perm=n_perm, seed=seed, mode="shared", scheme=scheme)
    return TestResult(
        statistic=float(res.statistic[0]),
        p_value=float(res.p_greater[0]),
        sidedness="greater",
        extra={"n_perm": n_perm, "scheme": scheme},
    )


# -- multiple comparisons -----------------------------------------------------

def bh_fdr(p_values, alpha: float = 0.05) -> np.ndarray:
    """Benjamini-Hochberg step-up rejection mask, in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    shape = p.shape
    p = p.ravel()
    if p.size == 0:
        raise ValidationError("bh_fdr needs at least one p-value")
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise ValidationError("p-values must lie in (0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    below = p[order] <= alpha * np.arange(1, m + 1) / m
    reject = np.zeros(m, dtype=bool)
    if below.any():
        k = np.flatnonzero(below)[-1]
        reject[order[: k + 1]] = True
    return reject.reshape(shape)


# -- parametric tests ---------------------------------------------------------

def t_test_two_sample(a, b, pooled: bool = True) -> TestResult:
    """Two-sided two-sample t-test; Student's pooled variance by default, Welch otherwise."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValidationError("each sample needs at least 2 observations")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    diff = a.mean() - b.mean()
    if pooled:
        df = na + nb - 2
        sp2 = ((na - 1) * va + (nb - 1) * vb) / df
        if sp2 <= 0:
            raise ValidationError("zero pooled variance")
        se = math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    else:
        qa, qb = va / na, vb / nb
        if qa + qb <= 0:
            raise ValidationError("zero variance in both samples")
        se = math.sqrt(qa + qb)
        df = (qa + qb) ** 2 / (qa * qa / (na - 1) + qb * qb / (nb - 1))
    t = diff / se
    return TestResult(statistic=float(t), p_value=_clip_p(special.student_t_two_sided(t, df)),
                      df=float(df), sidedness="two-sided",
                      extra={} if pooled else {"variant": "welch"})


def chi_square_independence(table) -> TestResult:
    """Pearson chi-square test of independence on an r x c table, no continuity correction."""
    obs = np.asarray(table, dtype=np.float64)
    if obs.ndim != 2 or min(obs.shape) < 2:
        raise ValidationError("contingency table must be at least 2 x 2")
    if np.any(obs < 0) or np.any(obs != np.round(obs)):
        raise ValidationError("contingency table counts must be non-negative integers")
    total = obs.sum()
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    if total <= 0 or np.any(rows == 0) or np.any(cols == 0):
        raise ValidationError("contingency table has a zero marginal")
    expected = np.outer(rows, cols) / total
    chi2 = float(((obs - expected) ** 2 / expected).sum())
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return TestResult(statistic=chi2, p_value=_clip_p(special.chi2_sf(chi2, df)), df=float(df),
                      sidedness="upper")


def binomial_test(k: int, n: int, p0: float = 0.5, side: str = "greater") -> TestResult:
    """Exact binomial test with tail sums accumulated in log space."""
    if not (0 <= k <= n) or int(k) != k or int(n) != n:
        raise ValidationError("need integers 0 <= k <= n")
    if not 0 < p0 < 1:
        raise ValidationError("p0 must lie in (0, 1)")
    ks = np.arange(n + 1)
    logpmf = special.log_binom_pmf(ks, n, p0)
    if side == "greater":
        log_p = logsumexp(logpmf[k:])
    elif side == "less":
        log_p = logsumexp(logpmf[: k + 1])
    elif side == "two-sided":
        # outcomes no more likely than the observed one, with a small relative slack
        keep = logpmf <= logpmf[k] + 1e-7
        log_p = logsumexp(logpmf[keep])
    else:
        raise ValidationError(f"unknown side {side!r}")
    log_p = min(0.0, float(log_p))
    return TestResult(statistic=float(k), p_value=_clip_p(math.exp(log_p)), sidedness=side,
                      log_p_value=log_p, extra={"n": int(n), "p0": float(p0)})


# -- agreement ----------------------------------------------------------------

def krippendorff_alpha(codings) -> float:
    """Nominal Krippendorff's alpha for a raters x items matrix (NaN = missing).

    Items with fewer than two codings are not pairable and are dropped.
    Perfect observed agreement returns 1.0 even when only one value occurs.
    """
    data = np.asarray(codings, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValidationError("codings must be a (raters, items) matrix with >= 2 raters")
    values = np.unique(data[~np.isnan(data)])
    index = {v: i for i, v in enumerate(values)}
    o = np.zeros((values.size, values.size))
    for u in range(data.shape[1]):
        col = data[:, u]
        col = col[~np.isnan(col)]
        m = col.size
        if m < 2:
            continue
        counts = np.zeros(values.size)
        for v in col:
            counts[index[v]] += 1
        # ordered pairs of distinct coders within the unit, weighted by 1/(m-1)
        o += (np.outer(counts, counts) - np.diag(counts)) / (m - 1)
    n = o.sum()
    if n == 0:
        raise ValidationError("no item has two or more codings")
    n_c = o.sum(axis=1)
    disagree_obs = n - np.trace(o)
    if disagree_obs == 0:
        return 1.0
    disagree_exp = (n * n - (n_c * n_c).sum()) / (n - 1)
    return float(1.0 - disagree_obs / disagree_exp)
