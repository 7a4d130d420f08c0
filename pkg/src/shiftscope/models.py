"""Estimators (boosted trees, least squares) and the logistic discriminator."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import List, Optional, Union

import jsonschema
import numpy as np

from . import _kernels
from .tabular import DataError, FeatureSummary, TabularDataset, summarize

MODEL_SCHEMA_VERSION = 1


class SingularDesignError(ValueError):
    pass


@dataclass(frozen=True)
class Tree:
    """One regression tree in flat-array form.

    Node 0 is the root.  ``left[k] < 0`` marks a leaf; samples route left
    iff ``x[feature[k]] < threshold[k]``.  ``cover[k]`` is the number of
    training samples that reached node ``k``.
    """

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def __post_init__(self):
        for name, dtype in (("left", np.int64), ("right", np.int64), ("feature", np.int64),
                            ("threshold", float), ("value", float), ("cover", float)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_nodes(self) -> int:
        return self.left.shape[0]

    @property
    def depth(self) -> int:
        def walk(k):
            if self.left[k] < 0:
                return 0
            return 1 + max(walk(self.left[k]), walk(self.right[k]))
        return walk(0)

    def check(self, n_features: Optional[int] = None) -> None:
        internal = self.left >= 0
        if not np.isfinite(self.value[~internal]).all():
            raise ValueError("leaf values must be finite")
        if (self.cover < 0).any():
            raise ValueError("cover must be non-negative")
        if (self.cover[internal] <= 0).any():
            raise ValueError("internal node with zero cover")
        kids = self.cover[self.left[internal]] + self.cover[self.right[internal]]
        if not np.allclose(kids, self.cover[internal], rtol=1e-12, atol=1e-9):
            raise ValueError("cover of a node must equal the sum of its children's covers")
        if n_features is not None and (self.feature[internal] >= n_features).any():
            raise ValueError("split feature index out of range")

    def expected_value(self) -> float:
        """Cover-weighted mean of the leaf values."""
        leaves = self.left < 0
        return float(np.dot(self.cover[leaves], self.value[leaves]) / self.cover[0])

    def to_nested(self, k: int = 0) -> dict:
        if self.left[k] < 0:
            return {"value": float(self.value[k]), "cover": float(self.cover[k])}
        return {"feature_index": int(self.feature[k]), "threshold": float(self.threshold[k]),
                "cover": float(self.cover[k]),
                "left": self.to_nested(int(self.left[k])),
                "right": self.to_nested(int(self.right[k]))}

    @classmethod
    def from_nested(cls, doc: dict) -> "Tree":
        cols = {k: [] for k in ("left", "right", "feature", "threshold", "value", "cover")}

        def add(node):
            k = len(cols["left"])
            for key in cols:
                cols[key].append(0)
            cols["cover"][k] = node["cover"]
            if "feature_index" in node:
                cols["feature"][k] = node["feature_index"]
                cols["threshold"][k] = node["threshold"]
                cols["value"][k] = 0.0
                cols["left"][k] = add(node["left"])
                cols["right"][k] = add(node["right"])
            else:
                cols["feature"][k] = -1
                cols["left"][k] = cols["right"][k] = -1
                cols["value"][k] = node["value"]
            return k

        add(doc)
        return cls(**cols)


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple
    base_score: float
    learning_rate: float
    objective: str
    n_features: int
    feature_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.objective not in ("squared_error", "logistic"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")

    @cached_property
    def packed(self):
        """Concatenated node arrays plus root offsets for the kernels."""
        if not self.trees:
            empty_i = np.zeros(0, dtype=np.int64)
            empty_f = np.zeros(0)
            return dict(left=empty_i, right=empty_i, feature=empty_i, threshold=empty_f,
                        value=empty_f, cover=empty_f, roots=empty_i, max_depth=0)
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees[:-1]]).astype(np.int64)

        def shift(arr, off):
            return np.where(arr >= 0, arr + off, -1)

        return dict(
            left=np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)]),
            right=np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)]),
            feature=np.concatenate([t.feature for t in self.trees]),
            threshold=np.concatenate([t.threshold for t in self.trees]),
            value=np.concatenate([t.value for t in self.trees]),
            cover=np.concatenate([t.cover for t in self.trees]),
            roots=offsets,
            max_depth=max(t.depth for t in self.trees),
        )

    def expected_value(self) -> float:
        return self.base_score + self.learning_rate * sum(t.expected_value() for t in self.trees)


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    training_summary: FeatureSummary
    feature_names: tuple = ()

    def __post_init__(self):
        a = np.array(self.coefficients, dtype=float).reshape(-1)
        if not np.isfinite(a).all() or not np.isfinite(self.intercept):
            raise ValueError("linear model parameters must be finite")
        if self.training_summary.p != a.shape[0]:
            raise ValueError("training summary dimension does not match coefficients")
        object.__setattr__(self, "coefficients", a)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[0]


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray
    intercept: float
    means: np.ndarray
    sds: np.ndarray
    l2_penalty: float
    n_iter: int = 0
    grad_norm: float = 0.0
    feature_names: tuple = ()

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[0]

    def decision_function(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return self.intercept + ((X - self.means) / self.sds) @ self.coefficients

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))


TrainedModel = Union[TreeEnsemble, LinearModel, LogisticModel]


def _as_matrix(X, p) -> np.ndarray:
    if isinstance(X, TabularDataset):
        X = X.features
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != p:
        raise DataError(f"model expects {p} features, got {X.shape[1]}")
    return X


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# least squares


def fit_linear_least_squares(data: TabularDataset) -> LinearModel:
    """Ordinary least squares through the normal equations.

    The Gram matrix is column-scaled before factorisation.  When the Cholesky
    factorisation fails, ``1e-10 * trace / dim`` is added to the diagonal and
    the fit retried; designs that are still numerically rank deficient after
    that raise :class:`SingularDesignError`.
    """
    if data.target is None:
        raise DataError("least squares needs a target")
    n, p = data.n, data.p
    if n <= p:
        raise DataError(f"least squares needs n > p, got n={n}, p={p}")
    D = np.hstack([np.ones((n, 1)), data.features])
    G = D.T @ D
    rhs = D.T @ data.target
    scale = np.sqrt(np.diag(G))
    scale[scale == 0] = 1.0
    Gs = G / np.outer(scale, scale)
    try:
        L = np.linalg.cholesky(Gs)
    except np.linalg.LinAlgError:
        Gs = Gs + 1e-10 * np.trace(Gs) / Gs.shape[0] * np.eye(Gs.shape[0])
        try:
            L = np.linalg.cholesky(Gs)
        except np.linalg.LinAlgError:
            raise SingularDesignError("design matrix is singular") from None
    if 1.0 / np.linalg.cond(Gs) < 1e-9:
        raise SingularDesignError("design matrix is numerically rank deficient")
    z = np.linalg.solve(L, rhs / scale)
    beta = np.linalg.solve(L.T, z) / scale
    return LinearModel(beta[1:], float(beta[0]), summarize(data), data.feature_names)


# ---------------------------------------------------------------------------
# logistic regression


def fit_logistic_regression(features, labels, l2_penalty: float = 1e-4,
                            tol: float = 1e-8, max_iter: int = 100,
                            feature_names=()) -> LogisticModel:
    """L2-penalised logistic regression by damped Newton (IRLS).

    Minimises ``mean log-loss + l2_penalty / 2 * ||beta||^2`` on standardized
    features; the intercept is not penalised.  Constant columns get sd 1 and
    a coefficient pinned at zero.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=float).reshape(-1)
    n, p = X.shape
    if y.shape[0] != n:
        raise DataError("labels and features have different lengths")
    if n < 2:
        raise DataError("logistic regression needs at least 2 rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("labels must be 0/1")
    if y.min() == y.max():
        raise DataError("labels contain a single class")
    if l2_penalty < 0:
        raise ValueError("l2_penalty must be >= 0")

    means = X.mean(axis=0)
    sds = X.std(axis=0)
    live = sds > 0
    sds = np.where(live, sds, 1.0)
    Z = np.hstack([np.ones((n, 1)), ((X - means) / sds)[:, live]])
    penalty = np.full(Z.shape[1], l2_penalty)
    penalty[0] = 0.0

    def objective(w):
        eta = Z @ w
        # log(1 + exp(eta)) - y * eta, stable
        return np.mean(np.logaddexp(0.0, eta) - y * eta) + 0.5 * np.dot(penalty * w, w)

    w = np.zeros(Z.shape[1])
    w[0] = np.log(y.mean() / (1.0 - y.mean()))
    f = objective(w)
    it = 0
    for it in range(1, max_iter + 1):
        prob = _sigmoid(Z @ w)
        grad = Z.T @ (prob - y) / n + penalty * w
        if np.linalg.norm(grad) < tol:
            it -= 1
            break
        H = (Z.T * (prob * (1.0 - prob))) @ Z / n + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = w - t * step
            fc = objective(cand)
            if fc <= f or t < 1e-10:
                break
            t *= 0.5
        w, f = cand, fc
    prob = _sigmoid(Z @ w)
    grad = Z.T @ (prob - y) / n + penalty * w

    coef = np.zeros(p)
    coef[live] = w[1:]
    return LogisticModel(coef, float(w[0]), means, sds, float(l2_penalty),
                         it, float(np.linalg.norm(grad)), tuple(feature_names))


# ---------------------------------------------------------------------------
# gradient boosting


def _build_tree(X, order, resid, hess, depth, min_leaf, newton):
    n = X.shape[0]
    left, right, feature, threshold, cover = [-1], [-1], [-1], [0.0], [float(n)]
    node_of = np.zeros(n, dtype=np.int64)       # global node id per sample
    frontier = [0]
    for _ in range(depth):
        if not frontier:
            break
        slot = np.full(len(left), -1, dtype=np.int64)
        slot[frontier] = np.arange(len(frontier))
        local = slot[node_of]
        feat, thr, _gain = _kernels.level_splits(X, order, resid, local, len(frontier), min_leaf)
        next_frontier = []
        for k, node in enumerate(frontier):
            if feat[k] < 0:
                continue
            kids = []
            for _side in range(2):
                kids.append(len(left))
                left.append(-1)
                right.append(-1)
                feature.append(-1)
                threshold.append(0.0)
                cover.append(0.0)
            left[node], right[node] = kids
            feature[node] = int(feat[k])
            threshold[node] = float(thr[k])
            next_frontier.extend(kids)
        if not next_frontier:
            break
        moving = local >= 0
        moving &= feat[np.maximum(local, 0)] >= 0
        rows = np.flatnonzero(moving)
        k = local[rows]
        go_left = X[rows, feat[k]] < thr[k]
        parents = node_of[rows]
        left_arr = np.asarray(left)
        right_arr = np.asarray(right)
        node_of[rows] = np.where(go_left, left_arr[parents], right_arr[parents])
        frontier = next_frontier

    n_nodes = len(left)
    counts = np.bincount(node_of, minlength=n_nodes).astype(float)
    sums = np.bincount(node_of, weights=resid, minlength=n_nodes)
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    leaf = left < 0
    if newton:
        h = np.bincount(node_of, weights=hess, minlength=n_nodes)
        value = np.where(leaf, sums / np.maximum(h, 1e-12), 0.0)
    else:
        value = np.where(leaf, sums / np.maximum(counts, 1.0), 0.0)
    # internal covers from the leaves upward
    cov = counts.copy()
    for k in range(n_nodes - 1, -1, -1):
        if left[k] >= 0:
            cov[k] = cov[left[k]] + cov[right[k]]
    tree = Tree(left, right, np.asarray(feature), np.asarray(threshold), value, cov)
    return tree, value[node_of]


def fit_gbdt(data: TabularDataset, depth: int = 3, n_trees: int = 100,
             learning_rate: float = 0.1, objective: str = "squared_error",
             min_samples_leaf: int = 5, return_history: bool = False):
    """Gradient-boosted regression trees with exact greedy splits.

    Each round fits a tree to the negative gradient (residuals, or
    probability residuals for ``objective="logistic"``).  Squared-error
    leaves hold the mean residual, logistic leaves a single Newton step.
    With ``return_history=True`` also returns the training loss before the
    first and after every round.
    """
    if data.target is None:
        raise DataError("boosting needs a target")
    if data.n < 10:
        raise DataError("boosting needs at least 10 rows")
    if depth < 1 or n_trees < 0:
        raise ValueError("depth must be >= 1 and n_trees >= 0")
    X = np.ascontiguousarray(data.features)
    y = data.target
    if objective == "logistic":
        if not np.isin(y, (0.0, 1.0)).all():
            raise DataError("logistic objective needs 0/1 targets")
        ybar = y.mean()
        if ybar in (0.0, 1.0):
            raise DataError("logistic objective needs both classes")
        base = float(np.log(ybar / (1.0 - ybar)))
    elif objective == "squared_error":
        base = float(y.mean())
    else:
        raise ValueError(f"unknown objective {objective!r}")

    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    raw = np.full(data.n, base)
    trees: List[Tree] = []
    history = [_training_loss(y, raw, objective)]
    for _ in range(n_trees):
        if objective == "logistic":
            prob = _sigmoid(raw)
            resid = y - prob
            hess = prob * (1.0 - prob)
        else:
            resid = y - raw
            hess = None
        tree, step = _build_tree(X, order, resid, hess, depth, min_samples_leaf,
                                 objective == "logistic")
        trees.append(tree)
        raw = raw + learning_rate * step
        if return_history:
            history.append(_training_loss(y, raw, objective))
    model = TreeEnsemble(tuple(trees), base, learning_rate, objective, data.p, data.feature_names)
    return (model, history) if return_history else model


def _training_loss(y, raw, objective):
    if objective == "logistic":
        return float(np.mean(np.logaddexp(0.0, raw) - y * raw))
    return float(np.mean((y - raw) ** 2))


# ---------------------------------------------------------------------------
# prediction


def predict(model: TrainedModel, data) -> np.ndarray:
    """Model output per row: raw score for ensembles, probability for logistic."""
    if isinstance(model, TreeEnsemble):
        X = np.ascontiguousarray(_as_matrix(data, model.n_features))
        if not model.trees:
            return np.full(X.shape[0], model.base_score)
        pk = model.packed
        raw = _kernels.ensemble_raw_sum(X, pk["left"], pk["right"], pk["feature"],
                                        pk["threshold"], pk["value"], pk["roots"])
        return model.base_score + model.learning_rate * raw
    if isinstance(model, LinearModel):
        X = _as_matrix(data, model.n_features)
        return model.intercept + X @ model.coefficients
    if isinstance(model, LogisticModel):
        return model.predict_proba(data)
    raise TypeError(f"cannot predict with {type(model).__name__}")


def predict_proba(model: TreeEnsemble, data) -> np.ndarray:
    return _sigmoid(predict(model, data))


# ---------------------------------------------------------------------------
# serialization


def load_schema(name: str) -> dict:
    """Bundled JSON schema ``schemas/<name>.schema.json``."""
    text = resources.files("shiftscope").joinpath(f"schemas/{name}.schema.json").read_text()
    return json.loads(text)


def model_schema() -> dict:
    return load_schema("model")


def model_to_dict(model: TrainedModel) -> dict:
    doc = {"schema_version": MODEL_SCHEMA_VERSION}
    if isinstance(model, TreeEnsemble):
        doc.update(kind="tree_ensemble", objective=model.objective,
                   base_score=model.base_score, learning_rate=model.learning_rate,
                   n_features=model.n_features, feature_names=list(model.feature_names),
                   trees=[t.to_nested() for t in model.trees])
    elif isinstance(model, LinearModel):
        s = model.training_summary
        doc.update(kind="linear", coefficients=model.coefficients.tolist(),
                   intercept=model.intercept, feature_names=list(model.feature_names),
                   training_summary={"n": s.n, "means": s.means.tolist(),
                                     "covariance": None if s.covariance is None else s.covariance.tolist()})
    elif isinstance(model, LogisticModel):
        doc.update(kind="logistic", coefficients=model.coefficients.tolist(),
                   intercept=model.intercept, means=model.means.tolist(), sds=model.sds.tolist(),
                   l2_penalty=model.l2_penalty, feature_names=list(model.feature_names))
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return doc


def model_from_dict(doc: dict) -> TrainedModel:
    try:
        jsonschema.validate(doc, model_schema())
    except jsonschema.ValidationError as exc:
        raise DataError(f"invalid model document: {exc.message}") from None
    kind = doc["kind"]
    if kind == "tree_ensemble":
        trees = tuple(Tree.from_nested(t) for t in doc["trees"])
        for t in trees:
            t.check(doc["n_features"])
        return TreeEnsemble(trees, doc["base_score"], doc["learning_rate"], doc["objective"],
                            doc["n_features"], doc.get("feature_names", ()))
    if kind == "linear":
        s = doc["training_summary"]
        cov = None if s["covariance"] is None else np.asarray(s["covariance"], dtype=float)
        summary = FeatureSummary(np.asarray(s["means"], dtype=float), cov, s["n"])
        return LinearModel(np.asarray(doc["coefficients"]), doc["intercept"], summary,
                           doc.get("feature_names", ()))
    return LogisticModel(np.asarray(doc["coefficients"], dtype=float), doc["intercept"],
                         np.asarray(doc["means"], dtype=float), np.asarray(doc["sds"], dtype=float),
                         doc["l2_penalty"], feature_names=tuple(doc.get("feature_names", ())))


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> TrainedModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from None
    return model_from_dict(doc)
