"""Shapley-value explanation engines.

* ``treeshap_path_dependent``: polynomial-time TreeSHAP using training covers
  as conditional-expectation weights.
* ``linear_shap_interventional``: ``a_i * (x_i - mu_i)``.
* ``linear_shap_correlated``: exact coalition sum with Gaussian conditioning
  on the training covariance.
* ``brute_force_shapley``: direct enumeration of all ``2**p`` coalitions under
  a chosen value function; the oracle the fast engines are checked against.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .models import LinearModel, LogisticModel, TreeEnsemble, _as_matrix, predict
from .tabular import DataError, TabularDataset

MAX_EXACT_FEATURES = 20

ENGINES = ("auto", "treeshap", "linear_interventional", "linear_correlated")
VALUE_SEMANTICS = ("tree_path_dependent", "linear_gaussian", "marginal_over_dataset")


class ComplexityError(ValueError):
    """Exact enumeration requested for too many features."""


@dataclass(frozen=True)
class Explanation:
    contributions: np.ndarray
    base_value: float

    def total(self) -> float:
        return float(math.fsum(self.contributions) + self.base_value)


@dataclass(frozen=True)
class ExplanationMatrix:
    values: np.ndarray          # (n, p)
    base_value: float
    feature_names: tuple
    engine: str = ""

    @property
    def shape(self):
        return self.values.shape

    def row(self, i) -> Explanation:
        return Explanation(self.values[i].copy(), self.base_value)

    def column(self, j) -> np.ndarray:
        if isinstance(j, str):
            j = self.feature_names.index(j)
        return self.values[:, j]

    def as_dataset(self, name="explanations") -> TabularDataset:
        return TabularDataset(self.values, [f"shap_{c}" for c in self.feature_names], None, name)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"shap_{c}" for c in self.feature_names] + ["base_value"])
            base = repr(float(self.base_value))
            for row in self.values:
                w.writerow([repr(float(v)) for v in row] + [base])


# ---------------------------------------------------------------------------
# trees


def _check_ensemble(model: TreeEnsemble):
    for t in model.trees:
        t.check(model.n_features)


def treeshap_matrix(model: TreeEnsemble, X) -> np.ndarray:
    """Path-dependent Shapley values of every row of ``X`` (raw-score scale)."""
    X = np.ascontiguousarray(_as_matrix(X, model.n_features))
    if not model.trees:
        return np.zeros(X.shape)
    _check_ensemble(model)
    pk = model.packed
    phi = _kernels.treeshap(X, pk["left"], pk["right"], pk["feature"], pk["threshold"],
                            pk["value"], pk["cover"], pk["roots"], pk["max_depth"])
    return model.learning_rate * phi


def treeshap_path_dependent(model: TreeEnsemble, x) -> Explanation:
    phi = treeshap_matrix(model, np.asarray(x, dtype=float).reshape(1, -1))[0]
    return Explanation(phi, model.expected_value())


# ---------------------------------------------------------------------------
# linear models


def _linear_inputs(model: LinearModel, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.n_features:
        raise DataError(f"model expects {model.n_features} features, got {x.shape[0]}")
    return x


def linear_shap_interventional(model: LinearModel, x) -> Explanation:
    x = _linear_inputs(model, x)
    mu = model.training_summary.means
    a = model.coefficients
    return Explanation(a * (x - mu), float(model.intercept + a @ mu))


def _gaussian_conditional_mean(mu, cov, known, x):
    """E[X | X_known = x_known] under N(mu, cov), as a full vector."""
    out = mu.copy()
    if known.all():
        return x.copy()
    if not known.any():
        return out
    k = np.flatnonzero(known)
    u = np.flatnonzero(~known)
    S_kk = cov[np.ix_(k, k)]
    S_uk = cov[np.ix_(u, k)]
    try:
        sol = np.linalg.solve(S_kk, x[k] - mu[k])
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        S_kk = S_kk + 1e-10 * np.eye(k.size)
        try:
            sol = np.linalg.solve(S_kk, x[k] - mu[k])
        except np.linalg.LinAlgError:
            raise DataError("singular covariance block in Gaussian conditioning") from None
    out[k] = x[k]
    out[u] = mu[u] + S_uk @ sol
    return out


def linear_shap_correlated(model: LinearModel, x) -> Explanation:
    """Correlation-aware Shapley values for a linear model.

    Coalition values are ``E[f | X_T = x_T] - E[f]`` with the conditional
    expectation taken under a Gaussian with the training means and
    covariance.
    """
    x = _linear_inputs(model, x)
    return brute_force_shapley(model, x, "linear_gaussian")


# ---------------------------------------------------------------------------
# brute force


def _coalition_masks(p):
    idx = np.arange(1 << p)
    return ((idx[:, None] >> np.arange(p)) & 1).astype(bool)


def _shapley_from_values(values: np.ndarray, p: int) -> np.ndarray:
    """Shapley sum over coalition values indexed by bitmask, compensated."""
    sizes = np.array([bin(m).count("1") for m in range(1 << p)])
    weights = np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p)
                        if s < p else 0.0 for s in sizes])
    phi = np.empty(p)
    for j in range(p):
        bit = 1 << j
        without = np.array([m for m in range(1 << p) if not m & bit], dtype=np.int64)
        terms = weights[without] * (values[without | bit] - values[without])
        phi[j] = math.fsum(terms)
    return phi


def _tree_conditional(tree, x_rows, masks):
    """E[tree(X) | X_T = x_T] for every row and every coalition mask.

    Features in the coalition follow ``x``; the rest split by cover share.
    Returns an array of shape (n_rows, n_masks).
    """
    def walk(k):
        if tree.left[k] < 0:
            return np.full((x_rows.shape[0], masks.shape[0]), tree.value[k])
        lo, hi, f = tree.left[k], tree.right[k], tree.feature[k]
        v_lo, v_hi = walk(lo), walk(hi)
        follow = np.where((x_rows[:, f] < tree.threshold[k])[:, None], v_lo, v_hi)
        mix = (tree.cover[lo] * v_lo + tree.cover[hi] * v_hi) / tree.cover[k]
        return np.where(masks[:, f][None, :], follow, mix)
    return walk(0)


def brute_force_values(model, X, value_semantics: str, background: Optional[TabularDataset] = None):
    """Coalition values ``v(T)`` for each row, indexed by bitmask; shape (n, 2**p)."""
    if value_semantics not in VALUE_SEMANTICS:
        raise ValueError(f"unknown value semantics {value_semantics!r}")
    p = model.n_features
    if p > MAX_EXACT_FEATURES:
        raise ComplexityError(f"exact enumeration over {p} features exceeds the limit of "
                              f"{MAX_EXACT_FEATURES}")
    X = _as_matrix(X, p)
    masks = _coalition_masks(p)

    if value_semantics == "tree_path_dependent":
        if not isinstance(model, TreeEnsemble):
            raise TypeError("tree_path_dependent semantics need a tree ensemble")
        _check_ensemble(model)
        total = np.full((X.shape[0], masks.shape[0]), model.base_score)
        for tree in model.trees:
            total += model.learning_rate * _tree_conditional(tree, X, masks)
        return total

    if value_semantics == "linear_gaussian":
        if not isinstance(model, LinearModel):
            raise TypeError("linear_gaussian semantics need a linear model")
        s = model.training_summary
        if s.covariance is None:
            raise DataError("linear_gaussian semantics need the training covariance")
        out = np.empty((X.shape[0], masks.shape[0]))
        for i, x in enumerate(X):
            for m, known in enumerate(masks):
                out[i, m] = model.intercept + model.coefficients @ _gaussian_conditional_mean(
                    s.means, s.covariance, known, x)
        return out

    if background is None or background.n == 0:
        raise DataError("marginal semantics need a non-empty background dataset")
    B = _as_matrix(background, p)
    out = np.empty((X.shape[0], masks.shape[0]))
    for i, x in enumerate(X):
        for m, known in enumerate(masks):
            hybrid = np.where(known[None, :], x[None, :], B)
            out[i, m] = np.mean(predict(model, hybrid))
    return out


def brute_force_shapley(model, x, value_semantics: str = "tree_path_dependent",
                        background: Optional[TabularDataset] = None) -> Explanation:
    """Shapley values by enumerating every coalition (``p <= 20``)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    values = brute_force_values(model, x, value_semantics, background)[0]
    return Explanation(_shapley_from_values(values - values[0], model.n_features),
                       float(values[0]))


def brute_force_matrix(model, X, value_semantics: str = "tree_path_dependent",
                       background: Optional[TabularDataset] = None) -> np.ndarray:
    values = brute_force_values(model, X, value_semantics, background)
    p = model.n_features
    return np.vstack([_shapley_from_values(v - v[0], p) for v in values])


# ---------------------------------------------------------------------------
# datasets


def explain_dataset(model, data, engine: str = "auto") -> ExplanationMatrix:
    """Explanation space of ``data``: row ``i`` explains row ``i``."""
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    if isinstance(data, TabularDataset):
        X, names = data.features, data.feature_names
    else:
        X = np.asarray(data, dtype=float)
        names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    if isinstance(model, LogisticModel):
        raise TypeError("explanations are defined for estimators, not for discriminators")

    if isinstance(model, TreeEnsemble):
        if engine not in ("auto", "treeshap"):
            raise ValueError(f"engine {engine!r} cannot explain a tree ensemble")
        return ExplanationMatrix(treeshap_matrix(model, X), model.expected_value(), names,
                                 "treeshap")
    if engine == "treeshap":
        raise ValueError("engine 'treeshap' cannot explain a linear model")
    X = _as_matrix(X, model.n_features)
    if engine in ("auto", "linear_interventional"):
        mu = model.training_summary.means
        phi = model.coefficients * (X - mu)
        return ExplanationMatrix(phi, float(model.intercept + model.coefficients @ mu), names,
                                 "linear_interventional")
    phi = np.vstack([linear_shap_correlated(model, x).contributions for x in X])
    base = float(model.intercept + model.coefficients @ model.training_summary.means)
    return ExplanationMatrix(phi, base, names, "linear_correlated")
