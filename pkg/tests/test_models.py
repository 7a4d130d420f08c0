import json

import numpy as np
import pytest
from scipy.optimize import minimize

from shiftscope.models import (LinearModel, SingularDesignError, Tree, TreeEnsemble, fit_gbdt,
                               fit_linear_least_squares, fit_logistic_regression, load_model,
                               model_from_dict, model_to_dict, predict, predict_proba, save_model)
from shiftscope.tabular import (DataError, FeatureSummary, ShiftScenario, TabularDataset,
                                generate_scenario, rng_for)

from conftest import random_ensemble, random_instances


def _data(X, y=None):
    X = np.asarray(X, dtype=float)
    return TabularDataset(X, [f"x{j + 1}" for j in range(X.shape[1])],
                          None if y is None else np.asarray(y, dtype=float))


def _stump(value_left=-1.0, value_right=1.0, threshold=0.0, cover=(50.0, 50.0)):
    return Tree.from_nested({"feature_index": 0, "threshold": threshold, "cover": sum(cover),
                             "left": {"value": value_left, "cover": cover[0]},
                             "right": {"value": value_right, "cover": cover[1]}})


# ---------------------------------------------------------------------------
# least squares


def test_ols_exact_line():
    x = np.arange(10.0)
    m = fit_linear_least_squares(_data(x[:, None], 2 * x + 3))
    assert m.coefficients[0] == pytest.approx(2, abs=1e-9)
    assert m.intercept == pytest.approx(3, abs=1e-9)


def test_ols_swap_uniform_recovers_sum():
    ref, _ = generate_scenario(ShiftScenario("swap_uniform", noise_sd=0.0, n=2000, seed=0))
    m = fit_linear_least_squares(ref)
    np.testing.assert_allclose(m.coefficients, [1, 1], atol=1e-6)
    assert abs(m.intercept) < 1e-6


def test_ols_matches_lstsq_oracle():
    rng = rng_for(1)
    X = rng.normal(size=(300, 4)) * [1, 10, 0.1, 1000]
    y = rng.normal(size=300)
    m = fit_linear_least_squares(_data(X, y))
    D = np.hstack([np.ones((300, 1)), X])
    beta = np.linalg.lstsq(D, y, rcond=None)[0]
    np.testing.assert_allclose(m.coefficients, beta[1:], rtol=1e-8, atol=1e-12)
    assert m.intercept == pytest.approx(beta[0], abs=1e-9)


def test_ols_duplicate_column_is_singular():
    x = rng_for(2).normal(size=50)
    with pytest.raises(SingularDesignError):
        fit_linear_least_squares(_data(np.c_[x, x], x))


def test_ols_needs_target_and_rows():
    with pytest.raises(DataError):
        fit_linear_least_squares(_data(np.zeros((5, 1))))
    with pytest.raises(DataError):
        fit_linear_least_squares(_data(np.zeros((2, 2)), [1, 2]))


# ---------------------------------------------------------------------------
# logistic regression


def _logistic_oracle(X, y, lam):
    mu, sd = X.mean(axis=0), X.std(axis=0)
    Z = np.hstack([np.ones((len(y), 1)), (X - mu) / sd])
    pen = np.r_[0.0, np.full(X.shape[1], lam)]

    def f(w):
        eta = Z @ w
        return np.mean(np.logaddexp(0, eta) - y * eta) + 0.5 * np.sum(pen * w * w)

    def g(w):
        p = 1 / (1 + np.exp(-(Z @ w)))
        return Z.T @ (p - y) / len(y) + pen * w

    return minimize(f, np.zeros(Z.shape[1]), jac=g, method="BFGS",
                    options={"gtol": 1e-12, "maxiter": 10_000}).x


def test_logistic_matches_generic_optimizer():
    rng = rng_for(3)
    X = rng.normal(size=(500, 3))
    y = (X @ [1.0, -2.0, 0.5] + rng.normal(size=500) > 0).astype(float)
    m = fit_logistic_regression(X, y, l2_penalty=1e-2)
    w = _logistic_oracle(X, y, 1e-2)
    np.testing.assert_allclose(m.coefficients, w[1:], atol=1e-6)
    assert m.intercept == pytest.approx(w[0], abs=1e-6)
    assert m.grad_norm < 1e-8


def test_logistic_no_signal():
    m = fit_logistic_regression(np.zeros((10, 2)), [0, 1] * 5)
    np.testing.assert_array_equal(m.coefficients, [0, 0])
    assert m.intercept == pytest.approx(0.0, abs=1e-12)


def test_logistic_separable_stays_finite():
    x = np.r_[np.linspace(-2, -0.1, 20), np.linspace(0.1, 2, 20)]
    y = (x > 0).astype(float)
    m = fit_logistic_regression(x[:, None], y, l2_penalty=1e-3)
    assert np.isfinite(m.coefficients).all()
    p = m.predict_proba(x[:, None])
    assert np.all((p > 0) & (p < 1))


def test_logistic_single_class_is_error():
    with pytest.raises(DataError):
        fit_logistic_regression(np.ones((4, 1)), [1, 1, 1, 1])


def test_logistic_constant_column_gets_zero():
    rng = rng_for(4)
    X = np.c_[rng.normal(size=200), np.full(200, 3.0)]
    y = (X[:, 0] > 0).astype(float)
    m = fit_logistic_regression(X, y)
    assert m.coefficients[1] == 0.0 and m.coefficients[0] > 0


# ---------------------------------------------------------------------------
# boosting


def _best_split_oracle(X, r, min_leaf):
    """Exhaustive single-node split: returns (feature, threshold, gain)."""
    n, p = X.shape
    best = (-1, 0.0, 0.0)
    base = r.sum() ** 2 / n
    for j in range(p):
        vals = np.unique(X[:, j])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = (lo + hi) / 2
            left = X[:, j] < thr
            nl = left.sum()
            if nl < min_leaf or n - nl < min_leaf:
                continue
            gain = r[left].sum() ** 2 / nl + r[~left].sum() ** 2 / (n - nl) - base
            if gain > best[2] * (1 + 1e-12) + 1e-300:
                best = (j, thr, gain)
    return best


def test_first_split_matches_exhaustive_search():
    for seed in range(5):
        rng = rng_for(5, seed)
        X = np.round(rng.normal(size=(60, 3)), 1)
        y = X[:, 0] * X[:, 1] + rng.normal(size=60)
        m = fit_gbdt(_data(X, y), depth=1, n_trees=1, learning_rate=1.0)
        j, thr, _ = _best_split_oracle(X, y - y.mean(), 5)
        t = m.trees[0]
        assert (t.feature[0], t.threshold[0]) == (j, pytest.approx(thr))


def test_gbdt_constant_target():
    X = rng_for(6).normal(size=(100, 2))
    m = fit_gbdt(_data(X, np.full(100, 2.5)), n_trees=5)
    assert all(t.n_nodes == 1 for t in m.trees)
    np.testing.assert_allclose(predict(m, X), 2.5)


def test_gbdt_learns_interaction_and_depth_matters():
    ref, _ = generate_scenario(ShiftScenario("multivariate", 0.0, n=50_000, seed=0))
    y = ref.target

    def r2(depth):
        m = fit_gbdt(ref, depth=depth)
        return 1 - np.mean((y - predict(m, ref)) ** 2) / np.var(y)

    r3 = r2(3)
    assert r3 > 0.9
    assert r2(1) < r3 - 0.2


def test_gbdt_loss_never_increases():
    ref, _ = generate_scenario(ShiftScenario("sensitivity", 0.3, n=2000, seed=1))
    _, hist = fit_gbdt(ref, n_trees=30, return_history=True)
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_gbdt_min_leaf_and_cover():
    ref, _ = generate_scenario(ShiftScenario("multivariate", 0.0, n=300, seed=2))
    m = fit_gbdt(ref, depth=4, n_trees=10)
    for t in m.trees:
        t.check(2)
        leaves = t.left < 0
        assert t.cover[0] == 300
        assert np.all(t.cover[leaves] >= 5)
        assert t.depth <= 4


def test_gbdt_logistic_objective():
    rng = rng_for(7)
    X = rng.normal(size=(1000, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(float)
    m, hist = fit_gbdt(_data(X, y), objective="logistic", n_trees=30, return_history=True)
    p = predict_proba(m, X)
    assert np.mean((p > 0.5) == y) > 0.95
    assert hist[-1] < hist[0]


def test_gbdt_is_deterministic():
    ref, _ = generate_scenario(ShiftScenario("multivariate", 0.0, n=500, seed=3))
    a, b = fit_gbdt(ref, n_trees=10), fit_gbdt(ref, n_trees=10)
    assert model_to_dict(a) == model_to_dict(b)


def test_gbdt_errors():
    with pytest.raises(DataError):
        fit_gbdt(_data(np.zeros((20, 1))))
    with pytest.raises(DataError):
        fit_gbdt(_data(np.zeros((20, 1)), np.full(20, 2.0)), objective="logistic")
    with pytest.raises(ValueError):
        fit_gbdt(_data(np.zeros((20, 1)), np.zeros(20)), depth=0)


# ---------------------------------------------------------------------------
# prediction


def test_zero_tree_ensemble():
    m = TreeEnsemble((), 0.7, 0.1, "squared_error", 2)
    np.testing.assert_array_equal(predict(m, np.zeros((3, 2))), [0.7] * 3)


def test_linear_predict():
    m = LinearModel(np.array([2.0, -1.0]), 3.0, FeatureSummary(np.zeros(2), None, 1))
    assert predict(m, [[1.0, 2.0]])[0] == 3.0


def test_stump_boundary_routes_right():
    m = TreeEnsemble((_stump(),), 0.0, 1.0, "squared_error", 1)
    np.testing.assert_array_equal(predict(m, [[0.0], [-1e-300]]), [1.0, -1.0])


def test_predict_matches_python_walk():
    rng = rng_for(8)
    for _ in range(20):
        m = random_ensemble(rng)
        X = random_instances(rng, m.n_features, 7)
        expected = []
        for x in X:
            s = 0.0
            for t in m.trees:
                k = 0
                while t.left[k] >= 0:
                    k = t.left[k] if x[t.feature[k]] < t.threshold[k] else t.right[k]
                s += t.value[k]
            expected.append(m.base_score + m.learning_rate * s)
        np.testing.assert_allclose(predict(m, X), expected, rtol=0, atol=1e-12)


def test_predict_wrong_width():
    m = TreeEnsemble((_stump(),), 0.0, 1.0, "squared_error", 1)
    with pytest.raises(DataError):
        predict(m, np.zeros((2, 3)))


def test_tree_check_rejects_bad_cover():
    t = _stump(cover=(10.0, 10.0))
    bad = Tree(t.left, t.right, t.feature, t.threshold, t.value, np.array([25.0, 10.0, 10.0]))
    with pytest.raises(ValueError):
        bad.check()


# ---------------------------------------------------------------------------
# serialization


def test_round_trip_all_kinds(tmp_path):
    ref, _ = generate_scenario(ShiftScenario("multivariate", 0.0, n=400, seed=4))
    models = [fit_gbdt(ref, n_trees=5), fit_linear_least_squares(ref),
              fit_logistic_regression(ref.features, (ref.target > 0).astype(float))]
    for i, m in enumerate(models):
        path = tmp_path / f"m{i}.json"
        save_model(m, path)
        back = load_model(path)
        assert model_to_dict(back) == model_to_dict(m)
        np.testing.assert_array_equal(predict(back, ref), predict(m, ref))


def test_tree_nested_format():
    doc = model_to_dict(TreeEnsemble((_stump(),), 0.5, 0.3, "squared_error", 1, ("a",)))
    root = doc["trees"][0]
    assert set(root) == {"feature_index", "threshold", "cover", "left", "right"}
    assert set(root["left"]) == {"value", "cover"}
    assert doc["schema_version"] == 1


def test_invalid_model_documents(tmp_path):
    doc = model_to_dict(TreeEnsemble((_stump(),), 0.5, 0.3, "squared_error", 1))
    del doc["trees"][0]["cover"]
    with pytest.raises(DataError):
        model_from_dict(doc)
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(DataError):
        load_model(tmp_path / "junk.json")
    with pytest.raises(DataError):
        load_model(tmp_path / "missing.json")
    doc = model_to_dict(TreeEnsemble((_stump(),), 0.5, 0.3, "squared_error", 1))
    doc["kind"] = "forest"
    with pytest.raises(DataError):
        model_from_dict(json.loads(json.dumps(doc)))
