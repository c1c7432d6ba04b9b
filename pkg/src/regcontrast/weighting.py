"""Propensity-score and stable balancing weights for the ATT."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from .core import Dataset, Method, WeightVector, dependent_columns
from .diagnostics import pooled_sd
from .errors import ConvergenceError, InfeasibleError, RankDeficiencyError, SeparationError, ValidationError
from .qp import kkt_residual, solve_min_norm

log = logging.getLogger(__name__)

GRAD_TOL = 1e-8
MAX_NEWTON = 50
DEFAULT_DELTA = 0.02


@dataclass(frozen=True, eq=False)
class PropensityFit:
    coefficients: np.ndarray  # intercept first
    scores: np.ndarray
    converged: bool
    iterations: int


def _logit_design(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def logistic_loglik(coef, D, z) -> float:
    eta = D @ coef
    return float(z @ eta - np.logaddexp(0.0, eta).sum())


def logistic_gradient(coef, D, z) -> np.ndarray:
    return D.T @ (z - _expit(D @ coef))


def _expit(eta):
    return expit(eta)


def _separating_direction(D: np.ndarray, z: np.ndarray):
    """Direction ``b`` with ``(2z-1) * (D b) >= 0`` for all units and not all
    zero, or ``None`` when no such direction exists (the MLE is finite)."""
    s = 2.0 * z - 1.0
    scale = np.abs(D).max(axis=0)
    scale[scale == 0] = 1.0
    A = (s[:, None] * D) / scale
    res = linprog(
        -A.sum(axis=0), A_ub=-A, b_ub=np.zeros(D.shape[0]),
        bounds=[(-1.0, 1.0)] * D.shape[1], method="highs",
    )
    if res.status != 0 or -res.fun <= 1e-9 * D.shape[0]:
        return None
    b = res.x / scale
    return b / np.linalg.norm(b)


def fit_propensity_logistic(dataset: Dataset) -> PropensityFit:
    """Logistic regression of treatment on covariates by damped Newton.

    Covariates that are constant across all units carry no information; they
    get slope zero instead of being reported as rank deficient.
    """
    z = dataset.treated.astype(float)
    keep = np.ptp(dataset.X, axis=0) > 0
    D = _logit_design(dataset.X[:, keep])
    dep = dependent_columns(D)
    if dep:
        raise RankDeficiencyError(f"propensity design is rank deficient (columns {dep})", dep)

    # the MLE is finite exactly when no direction separates the groups
    direction = _separating_direction(D, z)
    if direction is not None:
        full = np.zeros(dataset.p + 1)
        full[np.concatenate([[True], keep])] = direction
        raise SeparationError(
            f"treatment is (quasi-)separated by direction {np.round(full, 6).tolist()}",
            direction=full,
        )

    zbar = z.mean()
    beta = np.zeros(D.shape[1])
    beta[0] = np.log(zbar / (1.0 - zbar))
    ll = logistic_loglik(beta, D, z)
    converged = False
    it = 0
    for it in range(MAX_NEWTON + 1):
        p = _expit(D @ beta)
        grad = D.T @ (z - p)
        if np.max(np.abs(grad)) <= GRAD_TOL:
            converged = True
            break
        if it == MAX_NEWTON:
            break
        H = (D * (p * (1.0 - p))[:, None]).T @ D
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        # halve until the log-likelihood does not decrease (up to rounding)
        t = 1.0
        slack = 1e-12 * max(1.0, abs(ll))
        for _ in range(60):
            cand = beta + t * step
            ll_new = logistic_loglik(cand, D, z)
            if ll_new >= ll - slack:
                break
            t *= 0.5
        else:
            break
        beta, ll = cand, ll_new

    if not converged:
        log.warning("propensity fit stopped after %d iterations without converging", it)

    coef = np.zeros(dataset.p + 1)
    coef[np.concatenate([[True], keep])] = beta
    scores = _expit(_logit_design(dataset.X) @ coef)
    if np.any(scores <= 0.0) or np.any(scores >= 1.0):
        raise SeparationError("fitted propensity scores reached 0 or 1")
    return PropensityFit(coef, scores, bool(converged), it)


def ipw_att_weights(fit: PropensityFit, dataset: Dataset) -> WeightVector:
    """Treated weight one; control weight proportional to the odds e/(1-e)."""
    e = np.asarray(fit.scores, dtype=float)
    if e.shape != (dataset.n,):
        raise ValidationError("propensity scores do not match the dataset")
    c = dataset.control
    if np.any(e[c] >= 1.0 - 1e-12):
        raise ValidationError("a control has propensity score ~1; its odds weight is unbounded")
    odds = e[c] / (1.0 - e[c])
    w_c = odds * dataset.n_control / odds.sum()
    return WeightVector.from_groups(dataset.treated, 1.0, w_c, Method.IPW)


@dataclass(frozen=True)
class SbwConfig:
    """Balance tolerances in pooled-standard-deviation units, one per covariate
    (a scalar is broadcast). ``np.inf`` drops a covariate's constraint."""

    delta: object = DEFAULT_DELTA
    max_iterations: Optional[int] = None
    tolerance: float = 1e-8

    def deltas(self, p: int) -> np.ndarray:
        d = np.broadcast_to(np.asarray(self.delta, dtype=float), (p,)).copy()
        if np.any(np.isnan(d)) or np.any(d < 0):
            raise ValidationError("SBW delta must be >= 0")
        return d


def _sbw_rows(dataset: Dataset, target: np.ndarray, delta: np.ndarray):
    """Balance rows in standardized units: ``-delta <= B w <= delta``."""
    sd = pooled_sd(dataset)
    sd = np.where(sd > 0, sd, 1.0)
    Xc = dataset.X[dataset.control]
    B = ((Xc - target) / sd).T / dataset.n_control
    finite = np.isfinite(delta)
    G = np.vstack([B[finite], -B[finite]])
    h = np.concatenate([-delta[finite], -delta[finite]])
    return B, G, h, finite


def _treated_profile(dataset: Dataset, target_profile):
    if target_profile is None:
        return dataset.X[dataset.treated].mean(axis=0)
    t = np.asarray(target_profile, dtype=float).ravel()
    if t.shape != (dataset.p,):
        raise ValidationError(f"target profile must have length {dataset.p}")
    return t


def _feasible(dataset, target, delta) -> bool:
    _, G, h, _ = _sbw_rows(dataset, target, delta)
    try:
        solve_min_norm(G, h, float(dataset.n_control))
    except InfeasibleError:
        return False
    return True


def minimum_feasible_delta(dataset: Dataset, target_profile=None, delta=0.0, iterations: int = 60) -> np.ndarray:
    """Smallest uniform increase ``s`` such that ``delta + s`` is feasible,
    returned as the per-covariate tolerance vector ``delta + s``."""
    target = _treated_profile(dataset, target_profile)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (dataset.p,)).copy()
    B, _, _, _ = _sbw_rows(dataset, target, np.full(dataset.p, np.inf))
    gaps = np.abs(B.sum(axis=1))  # standardized imbalance of uniform weights
    hi = float(np.max(np.where(np.isfinite(delta), np.maximum(gaps - delta, 0.0), 0.0)))
    if _feasible(dataset, target, delta):
        return delta
    lo = 0.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if _feasible(dataset, target, delta + mid):
            hi = mid
        else:
            lo = mid
    return delta + hi


def sbw_solve(dataset: Dataset, target_profile=None, config: SbwConfig = SbwConfig()) -> WeightVector:
    """Stable balancing weights for the ATT.

    Control weights minimize ``sum (w - 1)^2`` subject to ``w >= 0``,
    ``sum w = n_c`` and ``|mean_w(x_j) - target_j| <= delta_j * sd_j``.
    Treated weights are one.
    """
    target = _treated_profile(dataset, target_profile)
    delta = config.deltas(dataset.p)
    B, G, h, finite = _sbw_rows(dataset, target, delta)
    n_c = dataset.n_control
    try:
        res = solve_min_norm(G, h, float(n_c), max_iter=config.max_iterations)
    except InfeasibleError:
        need = minimum_feasible_delta(dataset, target, delta)
        names = dataset.covariate_names
        msg = ", ".join(f"{nm}={d:.6g}" for nm, d in zip(names, need))
        raise InfeasibleError(
            f"SBW is infeasible at delta={delta.tolist()}; minimum feasible delta: {msg}",
            min_delta=need,
        ) from None
    except ConvergenceError:
        raise
    if res.kkt_residual > config.tolerance:
        raise ConvergenceError(
            f"SBW KKT residual {res.kkt_residual:.3g} exceeds tolerance {config.tolerance:.3g}",
            res.trace,
        )
    w_c = np.maximum(res.w, 0.0)
    w_c *= n_c / w_c.sum()
    info = {
        "objective": float(np.sum((w_c - 1.0) ** 2)),
        "kkt_residual": res.kkt_residual,
        "iterations": res.iterations,
        "delta": delta,
        "imbalance": B @ w_c,
        "target": target,
        "nu": res.nu,
        "row_multipliers": res.row_multipliers,
        "bound_multipliers": res.bound_multipliers,
    }
    return WeightVector.from_groups(dataset.treated, 1.0, w_c, Method.SBW, info=info)


def sbw_certificate(dataset: Dataset, weights: WeightVector, target_profile=None, delta=DEFAULT_DELTA,
                    zero_tol: float = 1e-10, active_tol: float = 1e-9) -> float:
    """KKT residual of SBW control weights, recomputed from the weights alone.

    Multipliers are recovered by least squares on the positive weights using
    the balance constraints that are at a bound; their signs and the
    nonnegativity multipliers of zero weights are then checked.
    """
    target = _treated_profile(dataset, target_profile)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (dataset.p,)).copy()
    B, G, h, finite = _sbw_rows(dataset, target, delta)
    w = weights.group("control")
    n_c = w.size
    gap = B @ w
    at_lower = finite & (gap <= -delta + active_tol)
    at_upper = finite & (gap >= delta - active_tol)
    act = np.flatnonzero(at_lower | at_upper)
    pos = w > zero_tol
    # w_i = nu + sum_j eta_j B_ji  on the positive set
    M = np.column_stack([np.ones(n_c), B[act].T])
    coef = np.linalg.lstsq(M[pos], w[pos], rcond=None)[0]
    nu, eta = coef[0], coef[1:]
    # eta_j >= 0 at the lower bound, <= 0 at the upper bound, free if both
    u_rows = np.zeros(2 * int(finite.sum()))
    fin_idx = np.flatnonzero(finite)
    for e, j in zip(eta, act):
        k = int(np.searchsorted(fin_idx, j))
        lower, upper = at_lower[j], at_upper[j]
        if lower and upper:
            if e >= 0:
                u_rows[k] = e
            else:
                u_rows[k + fin_idx.size] = -e
        elif lower:
            u_rows[k] = e
        else:
            u_rows[k + fin_idx.size] = -e
    u_bound = np.where(pos, 0.0, w - nu - G.T @ u_rows)
    return kkt_residual(w, G, h, float(n_c), nu, u_rows, u_bound)
