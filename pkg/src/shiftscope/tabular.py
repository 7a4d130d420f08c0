"""Tabular data model, CSV ingestion and synthetic shift scenarios."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SCENARIO_KINDS = ("multivariate", "uninformative", "swap_uniform", "sensitivity")


class DataError(ValueError):
    """Input data is malformed or inconsistent with what was asked of it."""


@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray
    feature_names: tuple
    target: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        X = np.array(self.features, dtype=float, copy=True)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        names = tuple(str(c) for c in self.feature_names)
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} feature names for {X.shape[1]} columns")
        if len(set(names)) != len(names):
            raise DataError("feature names must be distinct")
        if not np.isfinite(X).all():
            raise DataError("features contain NaN or infinite values")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "feature_names", names)
        if self.target is not None:
            y = np.array(self.target, dtype=float, copy=True).reshape(-1)
            if y.shape[0] != X.shape[0]:
                raise DataError(f"target has {y.shape[0]} values for {X.shape[0]} rows")
            if not np.isfinite(y).all():
                raise DataError("target contains NaN or infinite values")
            y.setflags(write=False)
            object.__setattr__(self, "target", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def take(self, rows, name=None) -> "TabularDataset":
        rows = np.asarray(rows, dtype=np.int64)
        target = None if self.target is None else self.target[rows]
        return TabularDataset(self.features[rows], self.feature_names, target,
                              self.name if name is None else name)

    def with_target(self, target, name=None) -> "TabularDataset":
        return TabularDataset(self.features, self.feature_names, target,
                              self.name if name is None else name)


@dataclass(frozen=True)
class FeatureSummary:
    means: np.ndarray
    covariance: Optional[np.ndarray]
    n: int

    @property
    def p(self) -> int:
        return self.means.shape[0]

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


@dataclass(frozen=True)
class ShiftScenario:
    kind: str
    rho: float = 0.0
    noise_sd: float = 0.1
    n: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {SCENARIO_KINDS}")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")


@dataclass(frozen=True)
class SplitPair:
    train: TabularDataset
    test: TabularDataset
    fraction: float
    seed: int
    train_rows: np.ndarray = field(repr=False, default=None)
    test_rows: np.ndarray = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, target_column: Optional[str] = None) -> TabularDataset:
    """Read a numeric CSV with a mandatory header row.

    Errors name the offending file position: rows are counted from 1 with
    the header as row 1, columns from 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if target_column is not None and target_column not in header:
            raise DataError(f"{path}: target column {target_column!r} not in header")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(raw)} cells, header has {len(header)}")
            values = []
            for col, cell in enumerate(raw, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: cannot parse {cell!r} at row {lineno}, column {col}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value at row {lineno}, column {col}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=float)
    if target_column is None:
        return TabularDataset(table, header, None, path.stem)
    t = header.index(target_column)
    keep = [j for j in range(len(header)) if j != t]
    return TabularDataset(table[:, keep], [header[j] for j in keep], table[:, t], path.stem)


def save_csv(data: TabularDataset, path, target_column: Optional[str] = "y") -> None:
    """Write ``data`` with full round-trip precision (``repr`` of each float)."""
    header = list(data.feature_names)
    cols = [data.features]
    if data.target is not None and target_column is not None:
        header.append(target_column)
        cols.append(data.target[:, None])
    table = np.hstack(cols)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in table:
            writer.writerow([repr(float(v)) for v in row])


def read_key_value(path) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}: line {lineno} is not key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def scenario_from_config(path) -> ShiftScenario:
    cfg = read_key_value(path)
    unknown = set(cfg) - {"kind", "rho", "n", "seed", "noise_sd"}
    if unknown:
        raise DataError(f"{path}: unknown scenario keys {sorted(unknown)}")
    if "kind" not in cfg:
        raise DataError(f"{path}: missing 'kind'")
    kwargs = {"kind": cfg["kind"]}
    for key, cast in (("rho", float), ("noise_sd", float), ("n", int), ("seed", int)):
        if key in cfg:
            kwargs[key] = cast(cfg[key])
    return ShiftScenario(**kwargs)


# ---------------------------------------------------------------------------
# statistics


def summarize(data: TabularDataset, covariance: bool = True) -> FeatureSummary:
    X = data.features
    means = X.mean(axis=0)
    if not covariance:
        return FeatureSummary(means, None, data.n)
    if data.n < 2:
        raise DataError("sample covariance needs at least 2 rows")
    cov = np.cov(X, rowvar=False, ddof=1).reshape(data.p, data.p)
    cov = 0.5 * (cov + cov.T)
    return FeatureSummary(means, cov, data.n)


# ---------------------------------------------------------------------------
# random generation


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Philox-backed generator for ``seed`` and an optional sub-stream id."""
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream])
    return np.random.Generator(np.random.Philox(seq))


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Box-Muller transform of the generator's uniform stream."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1]: keeps log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:count].reshape(shape)


def _correlated_pair(rng, n, rho):
    z = standard_normal(rng, (n, 2))
    # Cholesky factor of [[1, rho], [rho, 1]]
    x2 = rho * z[:, 0] + math.sqrt(max(0.0, 1.0 - rho * rho)) * z[:, 1]
    return np.column_stack([z[:, 0], x2])


def generate_scenario(spec: ShiftScenario):
    """Draw ``(reference, shifted)`` datasets, both carrying targets."""
    n = spec.n
    ref_rng = rng_for(spec.seed, 0)
    new_rng = rng_for(spec.seed, 1)

    def noise(rng):
        if spec.noise_sd == 0:
            return np.zeros(n)
        return spec.noise_sd * standard_normal(rng, n)

    if spec.kind == "multivariate":
        names = ("x1", "x2")
        X = standard_normal(ref_rng, (n, 2))
        Xn = _correlated_pair(new_rng, n, spec.rho)
        y = X[:, 0] * X[:, 1] + noise(ref_rng)
        yn = Xn[:, 0] * Xn[:, 1] + noise(new_rng)
    elif spec.kind == "sensitivity":
        names = ("x1", "x2", "x3")
        X = standard_normal(ref_rng, (n, 3))
        Xn = np.column_stack([_correlated_pair(new_rng, n, spec.rho), standard_normal(new_rng, n)])
        y = X[:, 0] * X[:, 1] + X[:, 2] + noise(ref_rng)
        yn = Xn[:, 0] * Xn[:, 1] + Xn[:, 2] + noise(new_rng)
    elif spec.kind == "uninformative":
        names = ("x1", "x2", "x3")
        X = standard_normal(ref_rng, (n, 3))
        y = X[:, 0] * X[:, 1] + noise(ref_rng)
        Xn = X.copy()
        Xn[:, 2] += 1.0
        yn = y.copy()
    else:  # swap_uniform
        names = ("x1", "x2")
        X = np.column_stack([ref_rng.random(n), 1.0 + ref_rng.random(n)])
        Xn = np.column_stack([1.0 + new_rng.random(n), new_rng.random(n)])
        y = X[:, 0] + X[:, 1] + noise(ref_rng)
        yn = Xn[:, 0] + Xn[:, 1] + noise(new_rng)

    tag = f"{spec.kind}(rho={spec.rho:g},seed={spec.seed})"
    return (TabularDataset(X, names, y, f"reference:{tag}"),
            TabularDataset(Xn, names, yn, f"shifted:{tag}"))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(data: TabularDataset, fraction: float, seed: int) -> SplitPair:
    """Uniform random partition with ``round_half_up(fraction * n)`` train rows."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n_train = round_half_up(fraction * data.n)
    if n_train < 1 or n_train >= data.n:
        raise DataError(f"split of {data.n} rows at fraction {fraction} leaves a side empty")
    perm = rng_for(seed, 2).permutation(data.n)
    train_rows = np.sort(perm[:n_train])
    test_rows = np.sort(perm[n_train:])
    return SplitPair(data.take(train_rows, f"{data.name}:train"),
                     data.take(test_rows, f"{data.name}:test"),
                     fraction, seed, train_rows, test_rows)


def concat(parts: Sequence[TabularDataset], name: str = "") -> TabularDataset:
    names = parts[0].feature_names
    for d in parts[1:]:
        if d.feature_names != names:
            raise DataError("cannot concatenate datasets with different schemas")
    target = None
    if all(d.target is not None for d in parts):
        target = np.concatenate([d.target for d in parts])
    return TabularDataset(np.vstack([d.features for d in parts]), names, target, name)
