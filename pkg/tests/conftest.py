import numpy as np
import pytest

from shiftscope.models import Tree, TreeEnsemble


def random_tree(rng, p, max_depth, zero_cover=False):
    """Random regression tree with additive covers; features may repeat on a path."""
    def node(depth):
        if depth < max_depth and (depth == 0 or rng.random() < 0.75):
            left, right = node(depth + 1), node(depth + 1)
            if left["cover"] + right["cover"] == 0:
                return {"value": float(rng.normal()), "cover": 0.0}
            return {"feature_index": int(rng.integers(p)),
                    "threshold": float(np.round(rng.normal(), 1)),
                    "cover": left["cover"] + right["cover"], "left": left, "right": right}
        cover = 0.0 if zero_cover and rng.random() < 0.1 else float(rng.integers(1, 40))
        return {"value": float(rng.normal()), "cover": cover}

    doc = node(0)
    if doc["cover"] == 0:
        return random_tree(rng, p, max_depth, zero_cover)
    return Tree.from_nested(doc)


def random_ensemble(rng, p=None, n_trees=None, max_depth=None, zero_cover=False):
    p = p or int(rng.integers(1, 9))
    n_trees = n_trees or int(rng.integers(1, 21))
    max_depth = max_depth or int(rng.integers(1, 5))
    trees = [random_tree(rng, p, max_depth, zero_cover) for _ in range(n_trees)]
    return TreeEnsemble(trees, float(rng.normal()), float(rng.uniform(0.05, 1.0)),
                        "squared_error", p)


def random_instances(rng, p, n):
    # a coarse grid makes instances land exactly on thresholds now and then
    return np.round(rng.normal(size=(n, p)), 1)


_LINES = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line and assert it."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
