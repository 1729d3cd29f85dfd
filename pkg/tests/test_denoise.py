import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from megdiff.denoise import (CrossSubjectDenoiser, average_repetitions, denoise_group,
                             fit_cross_subject_map, select_map_lambda)
from megdiff.exceptions import InsufficientSubjectsError, ValidationError
from megdiff.tensor_io import ResponseTensor


def _rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def _normal_eq_map(S, T):
    # independent oracle: augmented least squares with an explicit intercept column
    A = np.column_stack([S, np.ones(len(S))])
    coef = np.linalg.solve(A.T @ A, A.T @ T)
    return coef[:-1], coef[-1]


def test_self_map_reproduces_target():
    S = _rand((80, 4, 3))
    m = fit_cross_subject_map(S, S, 0.0)
    pred = m.predict(S)
    assert np.linalg.norm(pred - S) / np.linalg.norm(S) <= 1e-8


def test_planted_linear_map_recovered():
    rng = np.random.default_rng(1)
    S = rng.standard_normal((200, 3, 2))
    A = rng.standard_normal((2, 3, 3))
    c = rng.standard_normal((2, 3))
    T = np.einsum("ncw,wcd->ndw", S, A) + c.T[None]
    m = fit_cross_subject_map(S, T, 0.0)
    for w in range(2):
        W_oracle, b_oracle = _normal_eq_map(S[:, :, w], T[:, :, w])
        np.testing.assert_allclose(m.W[w], A[w], atol=1e-6)
        np.testing.assert_allclose(m.W[w], W_oracle, atol=1e-6)
        np.testing.assert_allclose(m.b[w], b_oracle, atol=1e-6)


def test_huge_lambda_gives_means():
    S, T = _rand((60, 3, 2), 2), _rand((60, 3, 2), 3)
    m = fit_cross_subject_map(S, T, 1e9)
    assert np.abs(m.W).max() < 1e-6
    np.testing.assert_allclose(m.predict(S), np.broadcast_to(T.mean(0), T.shape), atol=1e-6)


def test_errors():
    with pytest.raises(ValidationError):
        fit_cross_subject_map(_rand((10, 2, 2)), _rand((10, 3, 2)), 0.0)
    with pytest.raises(ValidationError):
        fit_cross_subject_map(_rand((10, 2, 2)), _rand((10, 2, 2)), -1.0)
    with pytest.raises(InsufficientSubjectsError):
        denoise_group([_rand((10, 2, 2))], lam=1.0)


def test_identical_subjects():
    M = _rand((50, 3, 2), 4)
    out = denoise_group([M, M, M], lam=0.0)
    assert np.linalg.norm(out.data - M) / np.linalg.norm(M) <= 1e-8


def test_two_subject_formula():
    a, b = _rand((60, 3, 2), 5), _rand((60, 3, 2), 6)
    lam = 2.0
    expected = (fit_cross_subject_map(b, a, lam).predict(b) +
                fit_cross_subject_map(a, b, lam).predict(a)) / 2
    np.testing.assert_allclose(denoise_group([a, b], lam=lam).data, expected, rtol=1e-12)


def test_denoising_improves_signal_correlation():
    rng = np.random.default_rng(8)
    n, c, t = 2000, 6, 2
    signal = rng.standard_normal((n, c, t))
    subjects = [signal + rng.standard_normal((n, c, t)) / 0.5 for _ in range(4)]

    def corr(x):
        return np.corrcoef(x.ravel(), signal.ravel())[0, 1]

    out = denoise_group(subjects, lam=1.0)
    assert corr(out.data) > np.mean([corr(s) for s in subjects])


@settings(max_examples=10, deadline=None)
@given(st.permutations(range(3)))
def test_subject_order_invariance(order):
    subs = [_rand((40, 3, 2), s) for s in range(3)]
    ref = denoise_group(subs, lam=0.5).data
    out = denoise_group([subs[i] for i in order], lam=0.5).data
    np.testing.assert_allclose(out, ref, atol=1e-12, rtol=0)


def test_shape_preserved_and_cv_lambda():
    subs = [_rand((60, 2, 3), s) for s in range(2)]
    out = denoise_group(subs)
    assert out.shape == (60, 2, 3)
    assert select_map_lambda(subs[0], subs[1], grid=(0.1, 1.0, 10.0)) in (0.1, 1.0, 10.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_monotone_shrinkage(seed, l1, l2):
    lo, hi = sorted((l1, l2))
    S, T = _rand((30, 3, 1), seed), _rand((30, 3, 1), seed + 1)
    w_lo = np.linalg.norm(fit_cross_subject_map(S, T, lo).W)
    w_hi = np.linalg.norm(fit_cross_subject_map(S, T, hi).W)
    assert w_hi <= w_lo * (1 + 1e-10) + 1e-12


def test_estimator_api():
    subs = [_rand((40, 2, 2), s) for s in range(3)]
    est = CrossSubjectDenoiser(alpha=1.0)
    assert est.get_params()["alpha"] == 1.0
    out = clone(est).fit(subs).transform(subs)
    np.testing.assert_allclose(out.data, denoise_group(subs, lam=1.0).data)


def test_average_repetitions():
    T = _rand((5, 2, 3))
    np.testing.assert_array_equal(average_repetitions([T, T]).data, T)
    assert np.all(average_repetitions([T, -T]).data == 0)
    with pytest.raises(ValidationError):
        average_repetitions([T, T[:4]])


def test_average_repetitions_variance():
    k, sigma = 5, 2.0
    rng = np.random.default_rng(9)
    reps = [ResponseTensor(rng.standard_normal((10**5, 1, 1)) * sigma) for _ in range(k)]
    var = average_repetitions(reps).data.var()
    assert abs(var - sigma**2 / k) <= 0.1 * sigma**2 / k
