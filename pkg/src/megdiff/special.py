"""Tail probabilities built on the regularized incomplete beta and gamma functions."""

from __future__ import annotations

import numpy as np
from scipy import special as sc


def regularized_beta(a, b, x):
    """``I_x(a, b)``."""
    return sc.betainc(a, b, x)


def regularized_gamma_upper(a, x):
    """``Q(a, x) = Gamma(a, x) / Gamma(a)``."""
    return sc.gammaincc(a, x)


def student_t_sf(t, df):
    """Upper tail ``P(T > t)`` of Student's t with ``df`` degrees of freedom."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        x = df / (df + t * t)
        half = 0.5 * sc.betainc(0.5 * df, 0.5, x)
    out = np.where(t >= 0, half, 1.0 - half)
    out = np.where(np.isposinf(t), 0.0, np.where(np.isneginf(t), 1.0, out))
    return out if out.ndim else float(out)


def student_t_two_sided(t, df):
    t = np.abs(np.asarray(t, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = sc.betainc(0.5 * df, 0.5, df / (df + t * t))
    out = np.where(np.isinf(t), 0.0, out)
    return out if out.ndim else float(out)


def chi2_sf(x, df):
    """Upper tail of the chi-square distribution."""
    return regularized_gamma_upper(0.5 * df, 0.5 * np.asarray(x, dtype=np.float64))


def log_binom_pmf(k, n, p):
    k = np.asarray(k, dtype=np.float64)
    log_choose = sc.gammaln(n + 1) - sc.gammaln(k + 1) - sc.gammaln(n - k + 1)
    return log_choose + sc.xlogy(k, p) + sc.xlog1py(n - k, -p)
