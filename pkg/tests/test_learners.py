import numpy as np
import pytest

from protoscope.errors import NonFiniteFeature, SchemaMismatch, SingleClassTraining
from protoscope.learners import (DEFAULT_GRIDS, FittedModel, ModelKind, StandardizerStats,
                                 expand_grid, fit, fit_cells, load_model, normalize_params,
                                 predict, save_model)
from protoscope.learners.linear import LogisticRegression
from protoscope.learners.mlp import MLP, init_weights, loss_and_grad
from protoscope.learners.trees import deviance

SMALL = {
    "LR": {"l2": 0.01},
    "DT": {"max_depth": 4, "min_leaf": 1},
    "RF": {"n_trees": 25, "max_depth": 4, "min_leaf": 1},
    "GB": {"n_stages": 30, "shrinkage": 0.1, "depth": 2},
    "MLP": {"hidden": (8,), "lr": 0.01, "epochs": 40},
}


def _data(n=120, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * [1, 10, 100, 0.1][:d]
    y = (X[:, 0] + X[:, 1] / 10 + 0.5 * rng.normal(size=n) > 0).astype(int)
    return X, y


def test_separable_pair_lr():
    model = fit("LR", {"l2": 0.001}, [[0.0], [1.0]], [0, 1], seed=0)
    assert predict(model, [[0.0], [1.0]]).tolist() == [0, 1]


def test_xor_tree():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
    y = np.array([0, 1, 1, 0])
    model = fit("DT", {"max_depth": 2, "min_leaf": 1}, X, y, seed=0)
    assert predict(model, X).tolist() == y.tolist()


def test_tree_midpoint_threshold():
    model = fit("DT", {"max_depth": 1, "min_leaf": 1}, [[1.0], [3.0]], [0, 1], seed=0)
    assert model.estimator.tree_.threshold[0] == 2.0


@pytest.mark.parametrize("kind", list(SMALL))
def test_fit_is_deterministic(kind):
    X, y = _data()
    probe = np.random.default_rng(9).normal(size=(30, 4)) * [1, 10, 100, 0.1]
    a = fit(kind, SMALL[kind], X, y, seed=4).predict_proba(probe)
    b = fit(kind, SMALL[kind], X, y, seed=4).predict_proba(probe)
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a <= 1))


@pytest.mark.parametrize("kind", list(SMALL))
def test_serialization_round_trip(kind, tmp_path):
    X, y = _data()
    model = fit(kind, SMALL[kind], X, y, seed=2)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.predict_proba(X), model.predict_proba(X))
    assert back.params == model.params and back.seed == 2


@pytest.mark.parametrize("kind", list(SMALL))
def test_learns_signal(kind):
    X, y = _data(300)
    Xt, yt = _data(200, seed=1)
    model = fit(kind, SMALL[kind], X, y, seed=0)
    assert np.mean(predict(model, Xt) == yt) > 0.75


@pytest.mark.parametrize("kind", ["DT", "RF", "GB"])
def test_tree_scale_robustness(kind):
    X, y = _data()
    scaled = X.copy()
    scaled[:, 1] *= 37.5
    a = predict(fit(kind, SMALL[kind], X, y, seed=1), X)
    b = predict(fit(kind, SMALL[kind], scaled, y, seed=1), scaled)
    assert np.array_equal(a, b)


def test_gb_deviance_nonincreasing():
    for seed in range(5):
        X = np.random.default_rng(seed).normal(size=(80, 3))
        y = np.random.default_rng(seed + 100).integers(0, 2, 80)
        model = fit("GB", {"n_stages": 50, "shrinkage": 0.1, "depth": 2}, X, y, seed=0)
        dev = np.array(model.estimator.train_deviance_)
        assert np.all(np.diff(dev) <= 1e-12)
        staged = [deviance(y, m) for m in model.estimator.staged_decision_function(X)]
        assert np.allclose(staged, dev)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(5, 3)), np.array([0, 1, 1, 0, 1], float)
    layers = init_weights([3, 6, 4, 1], seed=7)
    # shift biases so no ReLU sits at its kink
    layers = [(W, b + 0.1) for W, b in layers]
    _, grads = loss_and_grad(layers, X, y)
    eps = 1e-6
    for k, (W, b) in enumerate(layers):
        for arr, g in ((W, grads[k][0]), (b, grads[k][1])):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                up = loss_and_grad(layers, X, y)[0]
                arr[idx] = old - eps
                down = loss_and_grad(layers, X, y)[0]
                arr[idx] = old
                numeric = (up - down) / (2 * eps)
                assert abs(numeric - g[idx]) <= 1e-4 * max(abs(numeric), abs(g[idx]), 1e-6)


def test_mlp_kernel_matches_reference():
    X, y = _data(50, 3)
    X = StandardizerStats.estimate(X).transform(X)
    fast = MLP((8, 4), 0.01, 20, 16).fit(X, y.astype(float), seed=3)
    slow = MLP((8, 4), 0.01, 20, 16).fit_reference(X, y.astype(float), seed=3)
    assert np.allclose(fast.predict_proba(X), slow.predict_proba(X), atol=1e-12)


def test_zero_weight_lr_is_half():
    est = LogisticRegression(0.1)
    est.coef_, est.intercept_ = np.zeros(3), 0.0
    model = FittedModel(ModelKind.LR, {"l2": 0.1}, est, 3, 0)
    assert np.all(model.predict_proba(np.ones((4, 3))) == 0.5)


def test_unanimous_forest_is_one():
    X = np.r_[np.zeros((20, 2)), np.ones((20, 2))]
    y = np.r_[np.zeros(20), np.ones(20)]
    model = fit("RF", {"n_trees": 15, "max_depth": None, "min_leaf": 1}, X, y, seed=0)
    assert np.all(model.predict_proba(np.ones((3, 2))) == 1.0)


def test_single_leaf_tree_is_prior():
    X = np.ones((10, 2))
    y = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
    model = fit("DT", {"max_depth": 3, "min_leaf": 1}, X, y, seed=0)
    assert np.allclose(model.predict_proba(X), 0.3)


def test_predict_threshold():
    X, y = _data()
    model = fit("LR", SMALL["LR"], X, y, seed=0)
    p = model.predict_proba(X)
    assert np.array_equal(predict(model, X), (p >= 0.5).astype(int))
    counts = [predict(model, X, t).sum() for t in np.linspace(0, 1, 11)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_standardizer_uses_training_rows_only():
    X, y = _data()
    model = fit("LR", SMALL["LR"], X, y, seed=0)
    assert np.allclose(model.standardizer.mean, X.mean(axis=0))
    assert fit("DT", SMALL["DT"], X, y, seed=0).standardizer is None


def test_constant_feature_is_passed_through():
    stats = StandardizerStats.estimate(np.c_[np.ones(5), np.arange(5.0)])
    assert stats.constant.tolist() == [True, False]
    assert np.all(np.isfinite(stats.transform(np.ones((2, 2)))))


def test_errors():
    X, y = _data()
    with pytest.raises(SingleClassTraining):
        fit("LR", SMALL["LR"], X, np.zeros(len(y)), seed=0)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(NonFiniteFeature):
        fit("DT", SMALL["DT"], bad, y, seed=0)
    model = fit("DT", SMALL["DT"], X, y, seed=0)
    with pytest.raises(SchemaMismatch):
        model.predict_proba(X[:, :3])
    with pytest.raises(ValueError):
        normalize_params("GB", {"shrinkage": 2.0})
    with pytest.raises(ValueError):
        normalize_params("LR", {"depth": 2})


def test_default_grid_sizes():
    assert [len(expand_grid(k)) for k in ModelKind] == [4, 15, 12, 8, 6]
    assert expand_grid("RF")[0] == {"n_trees": 100, "max_depth": 4, "min_leaf": 1}
    assert set(DEFAULT_GRIDS) == set(ModelKind)


@pytest.mark.parametrize("kind,size", [("RF", "n_trees"), ("GB", "n_stages")])
def test_shared_cells_equal_separate_fits(kind, size):
    X, y = _data()
    cells = [dict(SMALL[kind], **{size: n}) for n in (5, 12, 20)]
    shared = fit_cells(kind, cells, X, y, seed=6)
    for cell, model in zip(cells, shared):
        assert np.array_equal(model.predict_proba(X), fit(kind, cell, X, y, seed=6).predict_proba(X))
