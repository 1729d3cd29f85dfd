"""Timing harness for the nested ridge fit and the batched permutation engine."""

from __future__ import annotations

import hashlib
import os
import time
import tracemalloc
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import clone
from threadpoolctl import threadpool_limits

from . import _permute
from .encoding import ContiguousRidgeCV, EncodeConfig, contiguous_folds, nested_cv_predict
from .exceptions import ValidationError
from .stats import permutation_test_batch
from .tensor_io import SynthConfig, synth_dataset

REPORT_KEYS = ("kind", "case", "cpu_count", "threads", "identical_across_threads", "digest")


@dataclass(frozen=True)
class BenchCase:
    n_words: int = 1000
    n_channels: int = 32
    n_windows: int = 20
    n_dims: int = 16
    n_perm: int = 1000
    threads: tuple[int, ...] = (1,)
    repetitions: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "threads", tuple(int(t) for t in self.threads))
        for name in ("n_words", "n_channels", "n_windows", "n_dims", "n_perm"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if not self.threads or min(self.threads) < 1:
            raise ValidationError("threads must be a non-empty list of positive integers")
        if self.repetitions < 3:
            raise ValidationError("repetitions must be >= 3")

    @classmethod
    def from_dict(cls, d) -> "BenchCase":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValidationError(f"unknown bench case field(s): {unknown}")
        return cls(**d)

    @classmethod
    def full_scale(cls, **overrides) -> "BenchCase":
        base = dict(n_words=5176, n_channels=306, n_windows=20, n_dims=64, n_perm=10000,
                    threads=(1, 4), repetitions=3)
        base.update(overrides)
        return cls(**base)


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _summary(times) -> dict:
    t = np.asarray(times)
    return {"median_s": float(np.median(t)), "p95_s": float(np.percentile(t, 95)),
            "times_s": [float(x) for x in t]}


def _data(case: BenchCase):
    cfg = SynthConfig(n_words=case.n_words, n_channels=case.n_channels, n_windows=case.n_windows,
                      n_dims=case.n_dims, signal_windows=(case.n_windows // 2,), seed=case.seed)
    return synth_dataset(cfg)


def bench_encode(case: BenchCase, cfg: EncodeConfig = EncodeConfig()) -> dict:
    """Time each outer fold of the nested ridge fit for every thread count."""
    emb, resp, _, _ = _data(case)
    X = emb.data
    Y = resp.data.reshape(resp.n_words, -1)
    with threadpool_limits(1):
        reference = nested_cv_predict(emb, resp, cfg)
    ref_digest = _digest(reference.data)
    outer = contiguous_folds(case.n_words, cfg.k_outer)
    template = ContiguousRidgeCV(cfg.lambda_grid, cfg.k_inner, cfg.per_target_lambda)
    per_thread = {}
    identical = True
    for threads in case.threads:
        fold_times = []
        with threadpool_limits(threads):
            for _ in range(case.repetitions):
                pred = np.empty_like(Y)
                for train, test in outer:
                    t0 = time.perf_counter()
                    est = clone(template).fit(X[train], Y[train])
                    pred[test] = est.predict(X[test])
                    fold_times.append(time.perf_counter() - t0)
                identical &= _digest(pred.reshape(reference.shape)) == ref_digest
        per_thread[str(threads)] = _summary(fold_times)
    return {
        "kind": "encode",
        "case": asdict(case),
        "cpu_count": os.cpu_count(),
        "threads": per_thread,
        "identical_across_threads": bool(identical),
        "digest": ref_digest,
    }


def bench_permute(case: BenchCase) -> dict:
    """Time the shared-permutation batch over all cells for every thread count."""
    rng = np.random.default_rng(case.seed)
    shape = (case.n_words, case.n_channels, case.n_windows)
    D = rng.standard_normal(shape)
    P1 = D + rng.standard_normal(shape) * 2.0
    P2 = rng.standard_normal(shape)
    per_thread = {}
    digests = set()
    peaks = []
    for threads in case.threads:
        applied = _permute.set_threads(threads)
        times = []
        for _ in range(case.repetitions):
            tracemalloc.start()
            t0 = time.perf_counter()
            res = permutation_test_batch(D, P1, P2, n_perm=case.n_perm, seed=case.seed)
            times.append(time.perf_counter() - t0)
            peaks.append(tracemalloc.get_traced_memory()[1])
            tracemalloc.stop()
            digests.add(_digest(res.p_greater, res.p_less))
        entry = _summary(times)
        entry["threads_applied"] = applied
        cells = case.n_channels * case.n_windows
        entry["cell_perms_per_s"] = cells * case.n_perm / entry["median_s"]
        per_thread[str(threads)] = entry
    _permute.set_threads(None)
    return {
        "kind": "permute",
        "case": asdict(case),
        "cpu_count": os.cpu_count(),
        "threads": per_thread,
        "identical_across_threads": len(digests) == 1,
        "digest": sorted(digests)[0],
        "peak_traced_bytes": peaks,
    }
