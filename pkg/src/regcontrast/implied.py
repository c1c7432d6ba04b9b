"""Weights implied by regression estimators of the ATT.

Both regression estimators are linear in the outcome, so their weights are
read off as the linear functional ``a`` with ``estimate == a @ y``. The
functional is obtained from the QR factors of the design, never from a
closed-form transcription.

``minvar_exact_balance_weights`` is a second, independent route: it solves
the equality-constrained variance minimization through its KKT system.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import (
    TREATMENT,
    Dataset,
    DesignSpec,
    Group,
    Method,
    WeightVector,
    build_design_matrix,
    linear_functional,
)
from .errors import InfeasibleError, ValidationError

FEASIBILITY_TOL = 1e-8


def uri_weights(dataset: Dataset, spec: Optional[DesignSpec] = None) -> WeightVector:
    """Implied weights of OLS on ``intercept + covariates + treatment``.

    The treatment coefficient is ``a @ y`` with ``a = D (D'D)^{-1} e_tau``.
    Since ``D' a = e_tau``, ``a`` sums to one over treated units and to minus
    one over controls, so ``w = n_t a`` (treated) and ``w = -n_c a``
    (control) satisfy the group-size normalization.
    """
    if spec is None:
        spec = DesignSpec.uri(dataset.p)
    if spec.has_interactions:
        raise ValidationError("uri_weights takes a design without interaction terms")
    if TREATMENT not in spec.terms:
        spec = DesignSpec((*spec.terms, TREATMENT), center=spec.center)
    D = build_design_matrix(dataset, spec)
    e = np.zeros(D.shape[1])
    e[spec.index_of(TREATMENT)] = 1.0
    a = linear_functional(D, e)
    t = dataset.treated
    w = np.where(t, dataset.n_treated * a, -dataset.n_control * a)
    return WeightVector(w, t, Method.URI, info={"design": spec})


def mri_weights(dataset: Dataset, spec: Optional[DesignSpec] = None) -> WeightVector:
    """Implied weights of the separate-regressions (interacted) ATT estimator.

    The control-only fit ``y_c ~ 1 + X_c`` is evaluated at the treated mean
    profile; that prediction is ``b @ y_c`` with
    ``b = D_c (D_c'D_c)^{-1} [1, xbar_t]``. Control weights are ``n_c b``,
    treated weights are one.
    """
    cols = list(range(dataset.p)) if spec is None else list(spec.covariate_indices)
    c = dataset.control
    if dataset.n_control <= len(cols):
        raise ValidationError(
            f"{dataset.n_control} controls cannot identify {len(cols) + 1} coefficients"
        )
    Dc = np.column_stack([np.ones(dataset.n_control), dataset.X[c][:, cols]])
    xbar_t = dataset.X[dataset.treated][:, cols].mean(axis=0)
    b = linear_functional(Dc, np.concatenate([[1.0], xbar_t]))
    return WeightVector.from_groups(
        dataset.treated, 1.0, dataset.n_control * b, Method.MRI, info={"covariates": cols}
    )


def weight_variance(weights: WeightVector, group) -> float:
    """Within-group variance of the weights (divisor ``n_g``)."""
    w = weights.group(group)
    return float(np.mean((w - w.mean()) ** 2))


def _solve_kkt(H: np.ndarray, A: np.ndarray, b: np.ndarray, g=None):
    """Solve ``min 1/2 w'Hw + g'w  s.t.  A w = b`` via its KKT system."""
    n, m = H.shape[0], A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([np.zeros(n) if g is None else -g, b])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _check_residual(A, w, b, labels):
    resid = A @ w - b
    scale = np.maximum(1.0, np.abs(b))
    rel = np.abs(resid) / scale
    worst = int(np.argmax(rel))
    if rel[worst] > FEASIBILITY_TOL:
        raise InfeasibleError(
            f"exact balance is infeasible: constraint {labels[worst]!r} misses by {resid[worst]:.3g}",
            dimension=labels[worst],
        )


def _group_minvar(X: np.ndarray, target: np.ndarray, names) -> np.ndarray:
    n_g = X.shape[0]
    # rows: sum(w) = n_g, (1/n_g) X'w = target
    A = np.vstack([np.ones(n_g), X.T / n_g])
    b = np.concatenate([[float(n_g)], target])
    w, _ = _solve_kkt(2.0 * np.eye(n_g), A, b, g=-2.0 * np.ones(n_g))
    _check_residual(A, w, b, ["(normalization)", *names])
    return w


def minvar_exact_balance_weights(
    dataset: Dataset, target_profile=None, group=Group.CONTROL
) -> WeightVector:
    """Minimum-variance weights that balance covariate means exactly.

    ``group="control"``: control weights minimize ``sum (w - 1)^2`` subject to
    the weighted control mean equaling ``target_profile``; treated weights
    are one.

    ``group="both"`` with a target: each group is balanced to the target
    separately. With ``target_profile=None`` the two groups are balanced to
    each other at a free profile, minimizing ``Var_t/n_t + Var_c/n_c``; this
    is the characterization of the single-regression weights.
    """
    group = Group(group)
    t = dataset.treated
    names = dataset.covariate_names
    if target_profile is not None:
        target_profile = np.asarray(target_profile, dtype=float).ravel()
        if target_profile.shape != (dataset.p,):
            raise ValidationError(f"target profile must have length {dataset.p}")
    if group is Group.CONTROL:
        if target_profile is None:
            raise ValidationError("group='control' needs a target profile")
        w_c = _group_minvar(dataset.X[~t], target_profile, names)
        return WeightVector.from_groups(t, 1.0, w_c, Method.MRI, info={"route": "kkt"})
    if group is Group.TREATED:
        raise ValidationError("group must be 'control' or 'both'")
    if target_profile is not None:
        w_t = _group_minvar(dataset.X[t], target_profile, names)
        w_c = _group_minvar(dataset.X[~t], target_profile, names)
        return WeightVector.from_groups(t, w_t, w_c, Method.MRI, info={"route": "kkt"})

    n_t, n_c = dataset.n_treated, dataset.n_control
    Xt, Xc = dataset.X[t], dataset.X[~t]
    n = n_t + n_c
    # variables: [w_t, w_c]; objective sum_t (w-1)^2/n_t^2 + sum_c (w-1)^2/n_c^2
    h = np.concatenate([np.full(n_t, 2.0 / n_t**2), np.full(n_c, 2.0 / n_c**2)])
    A = np.zeros((2 + dataset.p, n))
    A[0, :n_t] = 1.0
    A[1, n_t:] = 1.0
    A[2:, :n_t] = Xt.T / n_t
    A[2:, n_t:] = -Xc.T / n_c
    b = np.concatenate([[n_t, n_c], np.zeros(dataset.p)])
    w, _ = _solve_kkt(np.diag(h), A, b, g=-h)
    _check_residual(A, w, b, ["(treated normalization)", "(control normalization)", *names])
    return WeightVector.from_groups(t, w[:n_t], w[n_t:], Method.URI, info={"route": "kkt"})
