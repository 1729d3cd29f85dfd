"""Compiled kernels for the batched permutation engine.

Correlations are computed on standardized columns, so for a column ``c``
``corr(D[perm], P1) - corr(D[perm], P2) = sum_t zd[perm[t], c] * diff[t, c]``
with ``diff = z1 - z2``. Cells are processed in blocks that fit in cache; the
accumulation order over ``t`` is fixed, so results do not depend on how
blocks are scheduled across threads.
"""

import numba
import numpy as np
from numba import njit, prange

CELL_BLOCK = 32
PERM_BLOCK = 8


@njit(cache=True)
def column_dots(zd, diff):
    n, c = zd.shape
    out = np.zeros(c)
    for t in range(n):
        for j in range(c):
            out[j] += zd[t, j] * diff[t, j]
    return out


@njit(parallel=True, fastmath=False, cache=True)
def permutation_counts(zd, diff, observed, perms, block, pb):
    """Count permuted statistics strictly above and strictly below ``observed``."""
    n_perm, n = perms.shape
    c = zd.shape[1]
    greater = np.zeros(c, np.int64)
    less = np.zeros(c, np.int64)
    n_blocks = (c + block - 1) // block
    for b in prange(n_blocks):
        lo = b * block
        hi = min(c, lo + block)
        w = hi - lo
        zb = np.ascontiguousarray(zd[:, lo:hi])
        db = np.ascontiguousarray(diff[:, lo:hi])
        acc = np.empty((pb, w))
        for i0 in range(0, n_perm, pb):
            m = min(n_perm, i0 + pb) - i0
            acc[:] = 0.0
            for t in range(n):
                drow = db[t]
                for k in range(m):
                    zrow = zb[perms[i0 + k, t]]
                    a = acc[k]
                    for j in range(w):
                        a[j] += zrow[j] * drow[j]
            for k in range(m):
                for j in range(w):
                    x = acc[k, j]
                    if x > observed[lo + j]:
                        greater[lo + j] += 1
                    elif x < observed[lo + j]:
                        less[lo + j] += 1
    return greater, less


def set_threads(threads):
    """Bound numba's worker pool; returns the count actually applied."""
    if threads is None:
        return numba.get_num_threads()
    n = max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
