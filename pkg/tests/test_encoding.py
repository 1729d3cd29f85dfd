import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.model_selection import KFold

from megdiff.encoding import (ContiguousRidgeCV, EncodeConfig, RidgeEncoder, contiguous_folds,
                              fit_ridge, layer_sweep, nested_cv_predict)
from megdiff.evaluate import correlation_map
from megdiff.exceptions import RankDeficiencyError, ValidationError
from megdiff.tensor_io import EmbeddingMatrix, ResponseTensor, SynthConfig, synth_dataset


def normal_equations(X, Y, lam):
    # independent oracle: explicit Gram solve on centered data
    xm, ym = X.mean(0), Y.mean(0)
    Xc, Yc = X - xm, Y - ym
    W = np.linalg.solve(Xc.T @ Xc + lam * np.eye(X.shape[1]), Xc.T @ Yc)
    return W, ym - xm @ W


# -- folds --

def test_folds_singletons():
    f = contiguous_folds(10, 10)
    assert f.ranges == tuple((i, i + 1) for i in range(10))


def test_folds_remainder_rule():
    assert contiguous_folds(23, 10).sizes() == [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]


@pytest.mark.parametrize("n,k", [(5, 6), (5, 1)])
def test_folds_invalid(n, k):
    with pytest.raises(ValidationError):
        contiguous_folds(n, k)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 300), st.data())
def test_folds_partition(n, data):
    k = data.draw(st.integers(2, n))
    f = contiguous_folds(n, k)
    assert f.ranges[0][0] == 0 and f.ranges[-1][1] == n
    for (a, b), (c, _) in zip(f.ranges, f.ranges[1:]):
        assert b == c
    sizes = f.sizes()
    assert max(sizes) - min(sizes) <= 1
    assert sizes == sorted(sizes, reverse=True)
    # same blocks as sklearn's unshuffled KFold
    ours = [tuple(test) for _, test in f]
    theirs = [tuple(test) for _, test in KFold(k).split(np.zeros(n))]
    assert ours == theirs


# -- fit_ridge --

def test_ridge_hand_example():
    m = fit_ridge([[1], [2], [3]], [[2], [4], [6]], 0.0)
    np.testing.assert_allclose(m.W, [[2.0]], atol=1e-12)
    np.testing.assert_allclose(m.b, [0.0], atol=1e-12)


def test_ridge_shrinkage_limit():
    rng = np.random.default_rng(0)
    X, Y = rng.standard_normal((40, 3)), rng.standard_normal((40, 2))
    m = fit_ridge(X, Y, 1e9)
    Xc, Yc = X - X.mean(0), Y - Y.mean(0)
    assert np.abs(m.W).max() <= 1e-6 * np.linalg.norm(Xc.T @ Yc)
    np.testing.assert_allclose(m.predict(X), np.broadcast_to(Y.mean(0), Y.shape), atol=1e-6)


def test_ridge_matches_oracle():
    rng = np.random.default_rng(1)
    X, Y = rng.standard_normal((50, 4)), rng.standard_normal((50, 3))
    m = fit_ridge(X, Y, 0.7)
    W, b = normal_equations(X, Y, 0.7)
    assert np.linalg.norm(m.W - W) / np.linalg.norm(W) <= 1e-8
    assert np.linalg.norm(m.b - b) / np.linalg.norm(b) <= 1e-8


def test_ridge_rank_deficient():
    X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(RankDeficiencyError):
        fit_ridge(X, np.arange(10.0)[:, None], 0.0)
    fit_ridge(X, np.arange(10.0)[:, None], 0.1)


def test_ridge_validation():
    with pytest.raises(ValidationError):
        fit_ridge(np.ones((5, 2)), np.ones((4, 1)), 1.0)
    with pytest.raises(ValidationError):
        fit_ridge(np.ones((5, 2)), np.ones((5, 1)), -1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_residual_orthogonal_at_zero(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((30, 4)), rng.standard_normal((30, 2))
    m = fit_ridge(X, Y, 0.0)
    Xc = X - X.mean(0)
    r = Y - m.predict(X)
    scale = np.linalg.norm(Xc) * np.linalg.norm(Y)
    assert np.abs(Xc.T @ r).max() <= 1e-8 * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 100), st.floats(0, 100))
def test_monotone_in_lambda(seed, l1, l2):
    lo, hi = sorted((l1, l2))
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((25, 3)), rng.standard_normal((25, 2))
    a, b = fit_ridge(X, Y, lo), fit_ridge(X, Y, hi)
    mse = lambda m: np.mean((Y - m.predict(X)) ** 2)
    assert mse(b) >= mse(a) - 1e-12
    assert np.linalg.norm(b.W) <= np.linalg.norm(a.W) + 1e-12


# -- estimators --

def test_estimators_sklearn_api():
    rng = np.random.default_rng(2)
    X, Y = rng.standard_normal((60, 3)), rng.standard_normal((60, 2))
    est = RidgeEncoder(alpha=0.7)
    assert est.get_params() == {"alpha": 0.7}
    np.testing.assert_allclose(clone(est).fit(X, Y).predict(X), fit_ridge(X, Y, 0.7).predict(X))
    cv = ContiguousRidgeCV(alphas=(0.1, 1.0, 10.0), cv=3).fit(X, Y)
    assert cv.cv_mse_.shape == (3, 2)
    assert cv.alpha_ == (0.1, 1.0, 10.0)[int(np.argmin(cv.cv_mse_.mean(1)))]


def test_ridgecv_matches_manual_inner_cv():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((47, 4))
    Y = X @ rng.standard_normal((4, 3)) + rng.standard_normal((47, 3))
    grid = (0.01, 1.0, 100.0)
    cv = ContiguousRidgeCV(alphas=grid, cv=4).fit(X, Y)
    manual = np.zeros(3)
    for train, val in KFold(4).split(X):
        for j, lam in enumerate(grid):
            W, b = normal_equations(X[train], Y[train], lam)
            manual[j] += np.mean((X[val] @ W + b - Y[val]) ** 2)
    manual /= 4
    np.testing.assert_allclose(cv.cv_mse_.mean(1), manual, rtol=1e-10)


def test_per_target_lambda():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((80, 5))
    Y = np.column_stack([X @ rng.standard_normal(5), rng.standard_normal(80)])
    grid = (0.01, 1.0, 1e6)
    cv = ContiguousRidgeCV(alphas=grid, cv=4, alpha_per_target=True).fit(X, Y)
    expected = np.asarray(grid)[np.argmin(cv.cv_mse_, axis=0)]
    np.testing.assert_array_equal(cv.alpha_, expected)
    assert cv.alpha_[0] == 0.01
    for j in range(2):
        W, b = normal_equations(X, Y[:, [j]], cv.alpha_[j])
        np.testing.assert_allclose(cv.coef_[:, [j]], W, rtol=1e-9, atol=1e-12)


def test_encode_config():
    assert EncodeConfig().lambda_grid == tuple(np.logspace(-2, 6, 10))
    with pytest.raises(ValidationError):
        EncodeConfig(lambda_grid=(1.0, 0.5))
    with pytest.raises(ValidationError):
        EncodeConfig(lambda_grid=())
    with pytest.raises(ValidationError):
        EncodeConfig(k_outer=1)


# -- nested CV --

def _planted(sigma, n=400, seed=0):
    cfg = SynthConfig(n_words=n, n_channels=4, n_windows=4, n_dims=6, noise_sigma=sigma,
                      signal_windows=(1, 2), seed=seed)
    return cfg, synth_dataset(cfg)


def test_noiseless_recovery():
    cfg, (emb, resp, _, _) = _planted(0.0)
    cmap = correlation_map(nested_cv_predict(emb, resp), resp)
    assert np.all(cmap.r[:, list(cfg.signal_windows)] >= 0.999)


def test_null_data_mean_r_near_zero():
    rng = np.random.default_rng(5)
    L = rng.standard_normal((500, 8))
    M = ResponseTensor(rng.standard_normal((500, 4, 3)))
    cmap = correlation_map(nested_cv_predict(L, M), M)
    assert abs(cmap.mean()) <= 0.1


def test_null_data_intercept_bias():
    # with W shrunk to zero each test fold is predicted by the training mean, which is
    # anti-correlated with the held-out values: E[r] ~ -1/sqrt(n / k)
    rs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        L = rng.standard_normal((500, 8))
        M = ResponseTensor(rng.standard_normal((500, 4, 3)))
        rs.append(correlation_map(nested_cv_predict(L, M), M).mean())
    assert -1 / np.sqrt(50) - 0.05 <= np.mean(rs) < 0
    rng = np.random.default_rng(0)
    M = ResponseTensor(rng.standard_normal((500, 4, 3)))
    big = EncodeConfig(lambda_grid=(1e12,))
    r = correlation_map(nested_cv_predict(rng.standard_normal((500, 8)), M, big), M).mean()
    assert abs(r - (-1 / np.sqrt(50))) <= 0.05


def test_coverage_and_order():
    _, (emb, resp, _, _) = _planted(1.0, n=123)
    pred = nested_cv_predict(emb, resp, EncodeConfig(k_outer=7))
    assert pred.shape == resp.shape
    covered = np.zeros(123, int)
    for _, test in pred.folds:
        covered[test] += 1
    assert np.all(covered == 1)
    assert len(pred.lambdas) == 7
    manifest = pred.manifest()
    assert manifest["lambda_selection"] == "shared"
    assert manifest["fold_ranges"][0] == [0, 18]


def test_matches_manual_outer_loop():
    _, (emb, resp, _, _) = _planted(1.0, n=150)
    cfg = EncodeConfig(k_outer=5, k_inner=3)
    pred = nested_cv_predict(emb, resp, cfg)
    X, Y = emb.data, resp.data.reshape(150, -1)
    for i, (train, test) in enumerate(contiguous_folds(150, 5)):
        W, b = normal_equations(X[train], Y[train], pred.lambdas[i])
        np.testing.assert_allclose(pred.data.reshape(150, -1)[test], X[test] @ W + b, rtol=1e-9,
                                   atol=1e-10)


def test_no_test_fold_leakage():
    _, (emb, resp, _, _) = _planted(1.0, n=200)
    cfg = EncodeConfig(k_outer=4, k_inner=3)
    ref = nested_cv_predict(emb, resp, cfg)
    folds = contiguous_folds(200, 4)
    for i in range(4):
        test = folds.test_indices(i)
        corrupted = resp.data.copy()
        corrupted[test] = 1e6 * np.random.default_rng(i).standard_normal(corrupted[test].shape)
        out = nested_cv_predict(emb, corrupted, cfg)
        np.testing.assert_array_equal(out.data[test], ref.data[test])


def test_nested_errors():
    with pytest.raises(ValidationError):
        nested_cv_predict(np.ones((10, 2)), np.ones((9, 1, 1)))
    with pytest.raises(ValidationError):
        nested_cv_predict(np.random.default_rng(0).standard_normal((12, 2)),
                          np.ones((12, 1, 1)), EncodeConfig(k_outer=4, k_inner=10))


# -- layer sweep --

def test_layer_sweep_single_and_signal():
    _, (emb, resp, _, _) = _planted(1.0)
    noise = EmbeddingMatrix(np.random.default_rng(9).standard_normal(emb.data.shape), layer_id=0)
    signal = EmbeddingMatrix(emb.data, layer_id=1)
    mean_r, best = layer_sweep([signal], resp)
    assert best == 1 and set(mean_r) == {1}
    mean_r, best = layer_sweep([noise, signal], resp)
    assert best == 1
    assert mean_r[1] > mean_r[0]


def test_layer_sweep_tie_lowest_id():
    _, (emb, resp, _, _) = _planted(1.0)
    a = EmbeddingMatrix(emb.data, layer_id=5)
    b = EmbeddingMatrix(emb.data, layer_id=2)
    assert layer_sweep([a, b], resp).best_layer_id == 2


def test_layer_sweep_errors():
    with pytest.raises(ValidationError):
        layer_sweep([], np.zeros((3, 1, 1)))
