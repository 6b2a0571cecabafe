import warnings

import numpy as np
import pytest

from protoscope.errors import ShapeMismatch, SingularSystemWarning, TooManyFeatures, UnsupportedKind
from protoscope.explain import (DIRECT, INVERSE, NONE, Attribution, background_rows,
                                beeswarm_data, exact_shapley, explain, kernel_shap,
                                rank_importance, tree_shap, trend_direction,
                                weighted_cross_model_summary)
from protoscope.learners import FittedModel, ModelKind, fit
from protoscope.learners.trees import RandomForest


def _data(n=150, d=5, seed=0):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(n, d))
    y = (X[:, 0] - 0.7 * X[:, 1] + 0.5 * X[:, 2] * X[:, 3] + 0.3 * gen.normal(size=n) > 0)
    return X, y.astype(int)


def test_linear_closed_form():
    w = np.array([1.5, -2.0, 0.0, 0.25])
    model = lambda Z: Z @ w
    gen = np.random.default_rng(1)
    background, x = gen.normal(size=(30, 4)), gen.normal(size=4)
    phi, base = exact_shapley(model, x, background)
    assert np.allclose(phi, w * (x - background.mean(axis=0)), atol=1e-12)
    assert phi[2] == 0.0
    assert base == pytest.approx(float(np.mean(background @ w)))


def test_single_feature_efficiency():
    model = lambda Z: np.tanh(Z[:, 0])
    phi, base = exact_shapley(model, [0.8], [[0.1], [-0.4]])
    assert phi[0] == pytest.approx(np.tanh(0.8) - base)


def test_exact_limit():
    with pytest.raises(TooManyFeatures):
        exact_shapley(lambda Z: Z[:, 0], np.zeros(16), np.zeros((1, 16)))
    with pytest.raises(ShapeMismatch):
        exact_shapley(lambda Z: Z[:, 0], np.zeros(3), np.zeros((2, 4)))


def test_kernel_full_enumeration_matches_exact():
    gen = np.random.default_rng(2)
    W = gen.normal(size=(8, 5))
    model = lambda Z: 1 / (1 + np.exp(-np.sin(Z @ W).sum(axis=1)))
    background, x = gen.normal(size=(20, 8)), gen.normal(size=8)
    exact, base = exact_shapley(model, x, background)
    kernel, kbase = kernel_shap(model, x, background)
    assert np.max(np.abs(kernel - exact)) <= 1e-6
    assert kbase == pytest.approx(base)


def test_kernel_sampled_is_efficient():
    gen = np.random.default_rng(3)
    model = lambda Z: (Z ** 2).sum(axis=1)
    background, x = gen.normal(size=(10, 6)), gen.normal(size=6)
    phi, base = kernel_shap(model, x, background, n_coalitions=20, seed=4)
    assert base + phi.sum() == pytest.approx(float(model(x[None])[0]), abs=1e-6)


def test_kernel_symmetry_for_duplicates():
    model = lambda Z: np.exp(Z[:, 0] + Z[:, 1]) + Z[:, 2]
    gen = np.random.default_rng(4)
    x = gen.normal(size=3)
    x[1] = x[0]
    background = gen.normal(size=(15, 3))
    background[:, 1] = background[:, 0]
    phi, _ = kernel_shap(model, x, background)
    assert abs(phi[0] - phi[1]) <= 1e-6


def test_kernel_flags_singular_system(monkeypatch):
    import protoscope.explain as ex
    # every sampled coalition identical leaves the system rank deficient
    monkeypatch.setattr(ex, "_sample_coalitions",
                        lambda d, n, seed: np.tile([True] + [False] * (d - 1), (n, 1)))
    with pytest.warns(SingularSystemWarning):
        phi, base = kernel_shap(lambda Z: Z.sum(axis=1), np.ones(5), np.zeros((1, 5)),
                                n_coalitions=10, seed=0)
    assert np.all(np.isfinite(phi))
    assert base + phi.sum() == pytest.approx(5.0)


def test_stump_attributes_one_feature():
    X, y = _data()
    y = (X[:, 2] > 0.1).astype(int)
    model = fit("DT", {"max_depth": 1, "min_leaf": 1}, X, y, seed=0)
    attr = tree_shap(model, X[:20], X[20:60])
    assert np.all(attr.phi[:, [0, 1, 3, 4]] == 0.0)
    assert np.any(attr.phi[:, 2] != 0.0)


@pytest.mark.parametrize("kind,params", [
    ("DT", {"max_depth": 5, "min_leaf": 2}),
    ("RF", {"n_trees": 20, "max_depth": 4, "min_leaf": 1}),
    ("GB", {"n_stages": 25, "shrinkage": 0.1, "depth": 3}),
])
def test_tree_matches_exact(kind, params):
    X, y = _data(d=6)
    model = fit(kind, params, X, y, seed=5)
    background, rows = X[:25], X[100:106]
    attr = tree_shap(model, rows, background)
    for i, x in enumerate(rows):
        phi, base = exact_shapley(model, x, background)
        assert np.max(np.abs(attr.phi[i] - phi)) <= 1e-6
        assert attr.base_value == pytest.approx(base, abs=1e-12)
        assert attr.base_value + attr.phi[i].sum() == pytest.approx(
            model.predict_proba(x[None])[0], abs=1e-6)


def test_forest_of_identical_trees():
    X, y = _data()
    # pure leaves, so each tree's vote equals its probability
    single = fit("DT", {"max_depth": None, "min_leaf": 1}, X, y, seed=0)
    tree = single.estimator.tree_
    assert set(np.unique(tree.value[tree.feature < 0])) <= {0.0, 1.0}
    forest = RandomForest(n_trees=4)
    forest.trees_ = [single.estimator.tree_] * 4
    rf = FittedModel(ModelKind.RF, {"n_trees": 4}, forest, X.shape[1], 0)
    single_phi = tree_shap(single, X[:10], X[50:80]).phi
    assert np.allclose(tree_shap(rf, X[:10], X[50:80]).phi, single_phi, atol=1e-12)


def test_tree_shap_rejects_other_kinds():
    X, y = _data()
    with pytest.raises(UnsupportedKind):
        tree_shap(fit("LR", {"l2": 0.1}, X, y, seed=0), X[:2], X[:5])


@pytest.mark.parametrize("kind,params", [("LR", {"l2": 0.1}),
                                         ("MLP", {"hidden": (6,), "lr": 0.01, "epochs": 20})])
def test_kernel_models_satisfy_local_accuracy(kind, params):
    X, y = _data()
    model = fit(kind, params, X, y, seed=1)
    attr = explain(model, X[:5], X[40:70], [f"f{j}" for j in range(5)])
    assert attr.method == "kernel"
    assert np.allclose(attr.base_value + attr.phi.sum(axis=1), model.predict_proba(X[:5]),
                       atol=1e-6)


def test_zero_weight_feature_is_dummy():
    X, y = _data()
    X[:, 4] = 3.0  # constant column gets no weight after centering
    model = fit("LR", {"l2": 0.1}, X, y, seed=0)
    attr = explain(model, X[:5], X[40:70], list("abcde"))
    assert np.allclose(attr.phi[:, 4], 0.0, atol=1e-12)


def _attr(phi, names=None):
    phi = np.asarray(phi, dtype=float)
    return Attribution(phi, 0.0, names or [f"f{j}" for j in range(phi.shape[1])])


def test_rank_importance():
    assert rank_importance(_attr(np.zeros((3, 3)))) == [("f0", 0.0), ("f1", 0.0), ("f2", 0.0)]
    phi = np.random.default_rng(0).normal(size=(20, 3)) * [0.1, 5.0, 1.0]
    ranking = rank_importance(_attr(phi))
    assert [n for n, _ in ranking] == ["f1", "f2", "f0"]
    reversed_ranking = rank_importance(_attr(phi[::-1]))
    assert [n for n, _ in reversed_ranking] == [n for n, _ in ranking]
    assert [v for _, v in reversed_ranking] == pytest.approx([v for _, v in ranking])


def test_beeswarm_data():
    gen = np.random.default_rng(1)
    X = gen.normal(size=(12, 3))
    attr = _attr(gen.normal(size=(12, 3)) * [1, 3, 2])
    points = beeswarm_data(attr, X)
    assert len(points) == 36
    order = list(dict.fromkeys(p.feature for p in points))
    assert order == [n for n, _ in rank_importance(attr)]
    first = [p for p in points if p.feature == "f0"]
    assert first[int(np.argmin(X[:, 0]))].color == 0.0
    with pytest.raises(ShapeMismatch):
        beeswarm_data(attr, X[:5])


def test_trend_rules():
    x = np.random.default_rng(2).normal(size=(200, 1))
    assert trend_direction(_attr(2 * (x - x.mean())), x) == {"f0": DIRECT}
    assert trend_direction(_attr(-2 * (x - x.mean())), x) == {"f0": INVERSE}
    assert trend_direction(_attr(x), np.ones((200, 1))) == {"f0": NONE}
    nones = 0
    for seed in range(100):
        gen = np.random.default_rng(seed)
        col = gen.normal(size=(200, 1))
        nones += trend_direction(_attr(gen.permutation(col)), col) == {"f0": NONE}
    assert nones >= 95


def test_summary_arithmetic():
    rankings = {"A": [("tr", 1.0), ("te", 0.5)], "B": [("tr", 2.0), ("te", 0.1)]}
    trends = {"A": {"tr": DIRECT, "te": NONE}, "B": {"tr": DIRECT, "te": INVERSE}}
    summary = weighted_cross_model_summary(rankings, {"A": 0.8, "B": 0.9}, trends,
                                           ["tr", "te", "age"])
    assert summary.cell("A", "tr").impact_weight == pytest.approx(4.0)
    assert summary.cell("B", "tr").impact_weight == pytest.approx(4.5)
    assert summary.cell("B", "te").direction == INVERSE
    assert summary.cell("A", "age") is None
    one = weighted_cross_model_summary({"A": [("tr", 1.0)]}, {"A": 1.0}, {"A": {"tr": DIRECT}})
    assert one.cell("A", "tr").impact_weight == 5.0


def test_rank_beyond_window_scores_zero():
    names = [f"f{j}" for j in range(7)]
    summary = weighted_cross_model_summary({"A": [(n, 1.0) for n in names]}, {"A": 1.0},
                                           {"A": {}})
    assert [summary.cell("A", n).impact_weight for n in names] == [5, 4, 3, 2, 1, 0, 0]
    assert all(c.direction == NONE for c in summary.cells)


def test_background_rows():
    assert background_rows(40, 100, 0).tolist() == list(range(40))
    rows = background_rows(500, 100, 3)
    assert rows.size == 100 and np.all(np.diff(rows) > 0)
    assert np.array_equal(rows, background_rows(500, 100, 3))
