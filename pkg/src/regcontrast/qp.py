"""Dual active-set solver for ``min 1/2 ||w||^2`` under linear constraints.

Constraint families:

* one equality ``1'w = total``;
* nonnegativity ``w_i >= 0``;
* general rows ``G_k w >= h_k`` (few of them).

This is the Goldfarb-Idnani scheme specialised to an identity Hessian. The
solver starts from the minimizer under the equality alone and adds violated
constraints one at a time while keeping the multipliers dual feasible, so it
needs no feasible starting point and recognizes infeasibility when a
violated constraint cannot be reached. Active nonnegativity constraints are
handled by fixing coordinates at zero, so each step costs one small
least-squares solve on the free coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InfeasibleError

FEAS_TOL = 1e-11
ZERO_TOL = 1e-12


@dataclass
class QPResult:
    w: np.ndarray
    nu: float                 # multiplier of the equality
    row_multipliers: np.ndarray  # one per general row, >= 0
    bound_multipliers: np.ndarray  # one per coordinate, >= 0
    iterations: int
    kkt_residual: float
    trace: list = field(default_factory=list, repr=False)


def solve_min_norm(G: np.ndarray, h: np.ndarray, total: float, max_iter: int | None = None) -> QPResult:
    """Minimize ``1/2 ||w||^2`` s.t. ``sum(w) = total``, ``w >= 0``, ``G w >= h``.

    Raises ``InfeasibleError`` when the constraints have no common point.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    m, n = G.shape
    if h.shape != (m,):
        raise ValueError("G and h disagree")
    if max_iter is None:
        max_iter = 50 * (n + m) + 100
    row_norm = np.linalg.norm(G, axis=1)
    row_norm[row_norm == 0] = 1.0

    w = np.full(n, total / n)
    zero = np.zeros(n, dtype=bool)       # active nonnegativity constraints
    active_rows: list[int] = []          # active general rows, in insertion order
    u_rows: dict[int, float] = {}
    u_bound = np.zeros(n)
    nu = total / n
    trace = []

    def general_normals():
        cols = [np.ones(n)] + [G[k] for k in active_rows]
        return np.column_stack(cols)

    it = 0
    while True:
        # pick the most violated constraint (scaled by its normal's length)
        s_rows = (G @ w - h) / row_norm
        k_row = int(np.argmin(s_rows)) if m else -1
        worst_row = s_rows[k_row] if m else np.inf
        i_bound = int(np.argmin(np.where(zero, np.inf, w)))
        worst_bound = w[i_bound] if not zero.all() else np.inf
        if min(worst_row, worst_bound) >= -FEAS_TOL:
            break
        if worst_bound <= worst_row:
            new = ("bound", i_bound)
        else:
            new = ("row", k_row)
        u_new = 0.0

        while True:
            it += 1
            if it > max_iter:
                raise ConvergenceError(f"QP did not converge in {max_iter} iterations", trace)
            if new[0] == "bound":
                n_p = np.zeros(n)
                n_p[new[1]] = 1.0
                b_p = 0.0
            else:
                n_p = G[new[1]]
                b_p = h[new[1]]
            s_p = float(n_p @ w - b_p)
            if s_p >= -FEAS_TOL * (row_norm[new[1]] if new[0] == "row" else 1.0):
                break

            free = ~zero
            N = general_normals()
            NF = N[free]
            if NF.shape[0]:
                r_gen = np.linalg.lstsq(NF, n_p[free], rcond=None)[0]
            else:
                r_gen = np.zeros(N.shape[1])
            z = np.zeros(n)
            z[free] = n_p[free] - NF @ r_gen
            r_bound = np.where(zero, n_p - N @ r_gen, 0.0)

            # blocking: active inequality multipliers that would turn negative
            t1, block = np.inf, None
            for pos, k in enumerate(active_rows):
                rk = r_gen[pos + 1]
                if rk > ZERO_TOL:
                    ratio = u_rows[k] / rk
                    if ratio < t1:
                        t1, block = ratio, ("row", k)
            cand = np.flatnonzero(zero & (r_bound > ZERO_TOL))
            if cand.size:
                ratios = u_bound[cand] / r_bound[cand]
                j = int(np.argmin(ratios))
                if ratios[j] < t1:
                    t1, block = float(ratios[j]), ("bound", int(cand[j]))

            zn = float(z @ n_p)
            if np.linalg.norm(z) <= 1e-10 * max(1.0, np.linalg.norm(n_p)) or zn <= 0:
                if block is None:
                    what = "nonnegativity" if new[0] == "bound" else f"row {new[1]}"
                    raise InfeasibleError(f"constraints are infeasible ({what} cannot be met)",
                                          dimension=new[1] if new[0] == "row" else None)
                t = t1
            else:
                t2 = -s_p / zn
                t = min(t1, t2)
                w = w + t * z
            nu -= t * r_gen[0]
            for pos, k in enumerate(active_rows):
                u_rows[k] -= t * r_gen[pos + 1]
            u_bound = u_bound - t * r_bound
            u_new += t
            trace.append((it, new, block if t == t1 else None, float(t)))

            if t < t1 or block is None:
                # full step: constraint becomes active
                if new[0] == "bound":
                    zero[new[1]] = True
                    w[new[1]] = 0.0
                    u_bound[new[1]] = u_new
                else:
                    active_rows.append(new[1])
                    u_rows[new[1]] = u_new
                break
            # partial step: drop the blocking constraint
            if block[0] == "row":
                active_rows.remove(block[1])
                u_rows.pop(block[1])
            else:
                zero[block[1]] = False
                u_bound[block[1]] = 0.0

    w = np.where(zero, 0.0, w)
    u_r = np.zeros(m)
    for k in active_rows:
        u_r[k] = u_rows[k]
    u_b = np.where(zero, u_bound, 0.0)
    res = kkt_residual(w, G, h, total, nu, u_r, u_b)
    return QPResult(w, nu, u_r, u_b, it, res, trace)


def kkt_residual(w, G, h, total, nu, u_rows, u_bound) -> float:
    """Largest violation among stationarity, feasibility, dual sign and
    complementarity for the problem solved by ``solve_min_norm``."""
    G = np.atleast_2d(G)
    stat = w - nu - G.T @ u_rows - u_bound
    slack = G @ w - h
    parts = [
        np.max(np.abs(stat), initial=0.0),
        abs(w.sum() - total) / max(1.0, abs(total)),
        max(0.0, -np.min(w, initial=0.0)),
        max(0.0, -np.min(slack, initial=0.0)),
        max(0.0, -np.min(u_rows, initial=0.0)),
        max(0.0, -np.min(u_bound, initial=0.0)),
        np.max(np.abs(u_rows * slack), initial=0.0),
        np.max(np.abs(u_bound * w), initial=0.0),
    ]
    return float(max(parts))
