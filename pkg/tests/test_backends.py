import numpy as np
import pytest

from shiftscope import _kernels, active_backend
from shiftscope.models import fit_gbdt, model_to_dict, predict
from shiftscope.shapley import treeshap_matrix
from shiftscope.tabular import ShiftScenario, generate_scenario, rng_for

from conftest import random_ensemble, random_instances


def test_env_flag_selects_backend(monkeypatch):
    monkeypatch.setenv("SHIFTSCOPE_BACKEND", "numpy")
    assert active_backend() == "numpy"
    monkeypatch.setenv("SHIFTSCOPE_BACKEND", "numba")
    assert active_backend() == "numba"
    monkeypatch.setenv("SHIFTSCOPE_BACKEND", "cuda")
    with pytest.raises(ValueError):
        active_backend()


def _with_backend(monkeypatch, name, fn):
    monkeypatch.setenv("SHIFTSCOPE_BACKEND", name)
    return fn()


def test_fitted_trees_identical(monkeypatch):
    ref, _ = generate_scenario(ShiftScenario("sensitivity", 0.4, n=3000, seed=1))
    # rounding creates ties between candidate thresholds
    d = ref.with_target(np.round(ref.target, 1))
    a = _with_backend(monkeypatch, "numba", lambda: fit_gbdt(d, depth=4, n_trees=15))
    b = _with_backend(monkeypatch, "numpy", lambda: fit_gbdt(d, depth=4, n_trees=15))
    assert model_to_dict(a) == model_to_dict(b)


def test_predictions_identical(monkeypatch):
    rng = rng_for(2)
    for _ in range(10):
        m = random_ensemble(rng)
        X = random_instances(rng, m.n_features, 40)
        a = _with_backend(monkeypatch, "numba", lambda: predict(m, X))
        b = _with_backend(monkeypatch, "numpy", lambda: predict(m, X))
        np.testing.assert_array_equal(a, b)


def test_treeshap_agree(monkeypatch):
    rng = rng_for(3)
    for _ in range(20):
        m = random_ensemble(rng, zero_cover=True)
        # more rows than one numba block to cover the block boundary
        X = random_instances(rng, m.n_features, 300)
        a = _with_backend(monkeypatch, "numba", lambda: treeshap_matrix(m, X))
        b = _with_backend(monkeypatch, "numpy", lambda: treeshap_matrix(m, X))
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_split_kernels_agree():
    rng = rng_for(4)
    X = np.round(rng.normal(size=(500, 3)), 1)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    resid = rng.normal(size=500)
    node_of = rng.integers(-1, 4, size=500).astype(np.int64)
    a = _kernels.level_splits_numba(X, order, resid, node_of, 4, 5)
    b = _kernels.level_splits_numpy(X, order, resid, node_of, 4, 5)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_allclose(a[2], b[2], rtol=1e-12)
