import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from regcontrast import Dataset

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_dataset(rng: np.random.Generator, n: int = None, p: int = None, n_max: int = 200,
                   p_max: int = 5, shift: float = 0.5, min_group: int = 2) -> Dataset:
    """Random instance with a treatment-dependent covariate shift."""
    if p is None:
        p = int(rng.integers(1, p_max + 1))
    if n is None:
        n = int(rng.integers(max(p + 6, 2 * min_group), n_max + 1))
    z = np.zeros(n, dtype=bool)
    n_t = int(rng.integers(min_group, n - min_group + 1))
    z[rng.choice(n, size=n_t, replace=False)] = True
    X = rng.normal(size=(n, p)) + shift * z[:, None]
    y = X @ rng.normal(size=p) + 2.0 * z + rng.normal(size=n)
    return Dataset([f"u{i:03d}" for i in range(n)], z, X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one PASS/FAIL line per acceptance criterion, printed at the end of the run
_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        prev = _CRITERIA.get(key, True)
        _CRITERIA[key] = prev and report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if _CRITERIA[key] else 'FAIL'}")


def _simplex_grid_values(V, x, rest, a, b, lo, hi):
    """Objective at each grid row of ``V`` (weights on ``rest``), with the two
    extreme-x coordinates ``a`` and ``b`` optimized exactly; inf if infeasible."""
    k = x.size
    r = 1.0 - V.sum(axis=1)
    m0 = V @ x[rest]
    base = ((V - 1 / k) ** 2).sum(axis=1)
    # u on x[a], r - u on x[b]; x[a] < x[b] so the mean decreases in u
    span = x[a] - x[b]
    u_lo = np.maximum(0.0, (hi - m0 - r * x[b]) / span)
    u_hi = np.minimum(r, (lo - m0 - r * x[b]) / span)
    ok = (u_lo <= u_hi + 1e-15) & (r >= -1e-15) & np.all(V >= 0, axis=1)
    u = np.clip(r / 2, u_lo, u_hi)
    obj = base + (u - 1 / k) ** 2 + (r - u - 1 / k) ** 2
    return np.where(ok, obj, np.inf)


def simplex_grid_objective(x, lo, hi, step=0.01, refinements=2):
    """min sum (v - 1/k)^2 over the simplex with lo <= x.v <= hi.

    All coordinates but the two extreme-x ones run over a grid of the given
    step; those two are optimized exactly for each grid point. The grid is
    then refined around the best point, each pass ten times finer.
    """
    k = x.size
    a, b = int(np.argmin(x)), int(np.argmax(x))
    rest = [i for i in range(k) if i not in (a, b)]
    N = int(round(1 / step))
    g = np.arange(N + 1)
    inner = max(len(rest) - 1, 0)
    if inner:
        grid = np.stack(np.meshgrid(*[g] * inner, indexing="ij"), -1).reshape(-1, inner)
        grid = grid[np.argsort(grid.sum(axis=1), kind="stable")]
    else:
        grid = np.zeros((1, 0), dtype=int)
    cut = np.searchsorted(grid.sum(axis=1), np.arange(N + 1), side="right")
    best, best_v = np.inf, None
    for i0 in range(N + 1 if rest else 1):
        sub = grid[:cut[N - i0]]
        lead = np.full((len(sub), 1), i0) if rest else np.zeros((len(sub), 0), dtype=int)
        V = np.column_stack([lead, sub]) * step
        obj = _simplex_grid_values(V, x, rest, a, b, lo, hi)
        j = int(np.argmin(obj))
        if obj[j] < best:
            best, best_v = float(obj[j]), V[j]
    if best_v is None or not rest:
        return best
    offsets = np.arange(-10, 11)
    local = np.stack(np.meshgrid(*[offsets] * len(rest), indexing="ij"), -1).reshape(-1, len(rest))
    for _ in range(refinements):
        step /= 10
        V = best_v + local * step
        obj = _simplex_grid_values(V, x, rest, a, b, lo, hi)
        j = int(np.argmin(obj))
        if obj[j] < best:
            best, best_v = float(obj[j]), V[j]
    return best
