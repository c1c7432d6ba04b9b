"""Optimal 1:1 pair matching and profile matching of controls."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.spatial.distance import cdist

from .core import Dataset, Method, WeightVector
from .diagnostics import pooled_sd
from .errors import BudgetExceededError, InfeasibleError, ValidationError

PROFILE_MAX_CONTROLS = 500
PROFILE_TIME_BUDGET = 10.0
FEAS_EPS = 1e-10
METRICS = ("mahalanobis", "normalized_euclidean")


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    entries: np.ndarray  # (n_t, n_c)
    metric: str
    treated_ids: tuple
    control_ids: tuple


@dataclass(frozen=True, eq=False)
class MatchResult:
    pairs: tuple               # (treated id, control id); empty for profile matching
    selected_controls: frozenset
    total_distance: float
    weights: Optional[WeightVector]


def distance_matrix(dataset: Dataset, metric: str = "mahalanobis", allow_fallback: bool = True) -> DistanceMatrix:
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}; choose from {METRICS}")
    X = dataset.X
    t = dataset.treated
    if metric == "mahalanobis":
        S = np.atleast_2d(np.cov(X, rowvar=False))
        eig = np.linalg.eigvalsh(S)
        if eig[0] <= 1e-10 * max(eig[-1], 0.0) or eig[-1] <= 0:
            if not allow_fallback:
                raise ValidationError("covariate covariance is singular; Mahalanobis distance undefined")
            warnings.warn("singular covariance; falling back to normalized_euclidean", RuntimeWarning)
            metric = "normalized_euclidean"
        else:
            L = np.linalg.cholesky(S)
            Z = np.linalg.solve(L, X.T).T
    if metric == "normalized_euclidean":
        sd = X.std(axis=0, ddof=1)
        Z = X / np.where(sd > 0, sd, 1.0)
    D = cdist(Z[t], Z[~t])
    ids = np.asarray(dataset.ids, dtype=object)
    return DistanceMatrix(D, metric, tuple(ids[t]), tuple(ids[~t]))


def solve_assignment(cost: np.ndarray):
    """Min-cost assignment of every row to a distinct column (rows <= cols).

    Successive shortest augmenting paths with row/column potentials
    (Hungarian method, O(n^2 m)). Ties go to the lowest column index.
    Returns the column assigned to each row.
    """
    C = np.asarray(cost, dtype=float)
    n, m = C.shape
    if n > m:
        raise ValidationError(f"cannot match {n} rows into {m} columns")
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=int)  # 1-based row owning column j; 0 = free
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            rows_used = owner[used]
            u[rows_used] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    assign = np.empty(n, dtype=int)
    for j in range(1, m + 1):
        if owner[j]:
            assign[owner[j] - 1] = j - 1
    return assign


def _match_weights(treated_mask: np.ndarray, control_keep: np.ndarray, method: Method) -> WeightVector:
    n_c = control_keep.size
    k = int(control_keep.sum())
    w_c = np.where(control_keep, n_c / k, 0.0)
    return WeightVector.from_groups(treated_mask, 1.0, w_c, method)


def optimal_pair_match(d: DistanceMatrix, treated_mask=None) -> MatchResult:
    """Match each treated unit to a distinct control minimizing total distance.

    Rows and columns are processed in lexicographic id order so ties resolve
    the same way on every run. ``treated_mask`` (the dataset's treatment
    indicator) is needed to attach a weight vector.
    """
    D = np.asarray(d.entries, dtype=float)
    n_t, n_c = D.shape
    if n_t > n_c:
        raise ValidationError(f"pair matching needs n_t <= n_c, got {n_t} > {n_c}")
    r_ord = sorted(range(n_t), key=lambda i: d.treated_ids[i])
    c_ord = sorted(range(n_c), key=lambda j: d.control_ids[j])
    sub = D[np.ix_(r_ord, c_ord)]
    assign = solve_assignment(sub)
    pairs = []
    total = 0.0
    keep = np.zeros(n_c, dtype=bool)
    for a, b in enumerate(assign):
        i, j = r_ord[a], c_ord[b]
        pairs.append((d.treated_ids[i], d.control_ids[j]))
        total += D[i, j]
        keep[j] = True
    weights = None
    if treated_mask is not None:
        weights = _match_weights(np.asarray(treated_mask, dtype=bool), keep, Method.PAIR_MATCH)
    return MatchResult(
        tuple(sorted(pairs)),
        frozenset(d.control_ids[j] for j in np.flatnonzero(keep)),
        float(total),
        weights,
    )


def pair_match(dataset: Dataset, metric: str = "mahalanobis") -> MatchResult:
    return optimal_pair_match(distance_matrix(dataset, metric), dataset.treated)


# --- profile matching -----------------------------------------------------


def _profile_rows(Xc, target, tolerance, scale):
    """Rows ``c_r`` with ``sum_{i in S} c_ri <= 0`` for every r  <=>  S meets
    every ``|mean_S(x_j) - target_j| <= tolerance_j * scale_j``."""
    a = (Xc - target) / scale
    finite = np.isfinite(tolerance)
    up = a[:, finite] - tolerance[finite]
    lo = -a[:, finite] - tolerance[finite]
    return np.hstack([up, lo]).T


def _max_feasible_subset(C: np.ndarray, budget: float) -> np.ndarray:
    """Largest ``S`` with ``C[:, S].sum(axis=1) <= 0``, as a 0/1 integer program.

    HiGHS accepts rows violated by up to its feasibility tolerance (~1e-7), so
    the returned subset is rechecked in exact arithmetic; when it fails, the
    right-hand side is tightened by the observed violation and the program is
    solved again.
    """
    m, n = C.shape
    if m == 0:
        return np.ones(n, dtype=bool)
    deadline = time.monotonic() + budget
    rhs = np.zeros(m)
    for _ in range(8):
        left = deadline - time.monotonic()
        if left <= 0:
            break
        res = milp(
            -np.ones(n),
            constraints=LinearConstraint(C, -np.inf, rhs),
            integrality=np.ones(n),
            bounds=Bounds(0.0, 1.0),
            options={"mip_rel_gap": 0.0, "time_limit": left, "presolve": True},
        )
        if res.status == 2:  # infeasible: only the empty set qualifies
            return np.zeros(n, dtype=bool)
        if res.status != 0:
            break
        mask = res.x > 0.5
        load = C[:, mask].sum(axis=1)
        if np.all(load <= FEAS_EPS):
            return mask
        rhs = np.minimum(rhs, -2.0 * np.maximum(load, 0.0))
    raise BudgetExceededError(
        "profile matching did not finish within its time budget; loosen the tolerance "
        "or pre-screen the control pool"
    )


def profile_match(dataset: Dataset, target_profile=None, tolerance=0.05, standardize: bool = True,
                  budget: float = PROFILE_TIME_BUDGET, max_controls: int = PROFILE_MAX_CONTROLS) -> MatchResult:
    """Largest control subset whose covariate means sit within
    ``tolerance_j * sd_j`` of the target (``sd_j = 1`` when not standardizing).

    Solved exactly as a 0/1 integer program; all treated units are kept.
    """
    p = dataset.p
    target = (dataset.X[dataset.treated].mean(axis=0) if target_profile is None
              else np.asarray(target_profile, dtype=float).ravel())
    tol = np.broadcast_to(np.asarray(tolerance, dtype=float), (p,)).copy()
    if target.shape != (p,):
        raise ValidationError(f"target profile must have length {p}")
    if np.any(np.isnan(tol)) or np.any(tol < 0):
        raise ValidationError("profile matching tolerance must be >= 0")
    if dataset.n_control > max_controls:
        raise BudgetExceededError(
            f"{dataset.n_control} controls exceed the exact-solve cap of {max_controls}; "
            "loosen the tolerance or pre-screen controls"
        )
    if standardize:
        sd = pooled_sd(dataset)
        scale = np.where(sd > 0, sd, 1.0)
    else:
        scale = np.ones(p)
    Xc = dataset.X[dataset.control]
    C = _profile_rows(Xc, target, tol, scale)
    best = _max_feasible_subset(C, budget)
    if not best.any():
        raise InfeasibleError("no nonempty control subset meets the profile tolerances")
    ids = np.asarray(dataset.ids, dtype=object)[dataset.control]
    weights = _match_weights(dataset.treated, best, Method.PROFILE_MATCH)
    return MatchResult((), frozenset(ids[best]), 0.0, weights)
