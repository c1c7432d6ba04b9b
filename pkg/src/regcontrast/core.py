"""Dataset, design matrices, least squares and weight vectors.

Everything here is immutable once constructed. Arrays handed out by
``Dataset`` are read-only views.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import RankDeficiencyError, ValidationError

RANK_TOL = 1e-10
NORMALIZATION_TOL = 1e-8


class Method(str, enum.Enum):
    URI = "uri"
    MRI = "mri"
    IPW = "ipw"
    SBW = "sbw"
    PAIR_MATCH = "pair"
    PROFILE_MATCH = "profile"
    UNIFORM = "uniform"


NONNEGATIVE_METHODS = frozenset(
    {Method.IPW, Method.SBW, Method.PAIR_MATCH, Method.PROFILE_MATCH, Method.UNIFORM}
)


class Group(str, enum.Enum):
    TREATED = "treated"
    CONTROL = "control"
    BOTH = "both"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Units with a binary treatment, covariates and an outcome.

    ``X`` is ``(n, p)``, ``treated`` a boolean vector, ``y`` the outcome.
    """

    ids: tuple
    treated: np.ndarray
    X: np.ndarray
    y: np.ndarray
    covariate_names: tuple

    def __init__(self, ids, treated, X, y, covariate_names=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValidationError("covariates must be a 2-d array")
        n, p = X.shape
        if p < 1:
            raise ValidationError("need at least one covariate")
        ids = tuple(str(i) for i in ids)
        treated_arr = np.asarray(treated)
        if treated_arr.dtype != bool:
            if not np.all(np.isin(treated_arr, (0, 1))):
                raise ValidationError("treatment indicator must be 0/1")
            treated_arr = treated_arr.astype(bool)
        y = np.asarray(y, dtype=float)
        if len(ids) != n or treated_arr.shape != (n,) or y.shape != (n,):
            raise ValidationError("ids, treatment, covariates and outcome disagree in length")
        if len(set(ids)) != n:
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise ValidationError(f"duplicate unit id {dup!r}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValidationError("non-finite covariate or outcome value")
        n_t = int(treated_arr.sum())
        if n_t < 2 or n - n_t < 2:
            raise ValidationError(
                f"need at least 2 treated and 2 control units, got {n_t} and {n - n_t}"
            )
        if covariate_names is None:
            covariate_names = [f"x{j}" for j in range(p)]
        covariate_names = tuple(str(c) for c in covariate_names)
        if len(covariate_names) != p:
            raise ValidationError("covariate_names length does not match covariates")
        t = treated_arr.copy()
        t.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "treated", t)
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "covariate_names", covariate_names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treated.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    @property
    def control(self) -> np.ndarray:
        return ~self.treated

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.covariate_names == other.covariate_names
            and np.array_equal(self.treated, other.treated)
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    def __len__(self):
        return self.n

    def with_outcome(self, y) -> "Dataset":
        return Dataset(self.ids, self.treated, self.X, y, self.covariate_names)

    def with_covariate(self, name: str, values) -> "Dataset":
        """Return a copy with an extra covariate column appended (e.g. a square)."""
        values = np.asarray(values, dtype=float).reshape(-1, 1)
        return Dataset(
            self.ids, self.treated, np.hstack([self.X, values]), self.y,
            self.covariate_names + (name,),
        )

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask, dtype=bool)
        return Dataset(
            [i for i, m in zip(self.ids, mask) if m],
            self.treated[mask], self.X[mask], self.y[mask], self.covariate_names,
        )


@dataclass(frozen=True)
class Term:
    kind: str  # "intercept" | "covariate" | "treatment" | "interaction"
    index: Optional[int] = None

    def label(self, names: Sequence[str]) -> str:
        if self.kind == "intercept":
            return "(intercept)"
        if self.kind == "treatment":
            return "treatment"
        if self.kind == "covariate":
            return names[self.index]
        return f"treatment:{names[self.index]}"


INTERCEPT = Term("intercept")
TREATMENT = Term("treatment")


def covariate(j: int) -> Term:
    return Term("covariate", j)


def interaction(j: int) -> Term:
    return Term("interaction", j)


@dataclass(frozen=True, eq=False)
class DesignSpec:
    terms: tuple
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        kinds = [t.kind for t in self.terms]
        bad = set(kinds) - {"intercept", "covariate", "treatment", "interaction"}
        if bad:
            raise ValidationError(f"unknown term kind(s) {sorted(bad)}")
        if kinds.count("intercept") != 1:
            raise ValidationError("design needs exactly one intercept term")
        if kinds.count("treatment") > 1:
            raise ValidationError("design has more than one treatment term")
        if "interaction" in kinds and "treatment" not in kinds:
            raise ValidationError("interaction terms require a treatment term")
        if len(set(self.terms)) != len(self.terms):
            raise ValidationError("duplicate design terms")
        if self.center is not None:
            object.__setattr__(self, "center", _frozen(np.ravel(self.center)))

    @classmethod
    def uri(cls, p: int, covariates: Optional[Sequence[int]] = None) -> "DesignSpec":
        """intercept + covariates + treatment."""
        cols = range(p) if covariates is None else covariates
        return cls((INTERCEPT, *(covariate(j) for j in cols), TREATMENT))

    @classmethod
    def mri(cls, p: int, center=None, covariates: Optional[Sequence[int]] = None) -> "DesignSpec":
        """URI design plus treatment-by-covariate interactions."""
        cols = list(range(p) if covariates is None else covariates)
        return cls(
            (INTERCEPT, *(covariate(j) for j in cols), TREATMENT, *(interaction(j) for j in cols)),
            center=center,
        )

    @property
    def covariate_indices(self) -> tuple:
        return tuple(t.index for t in self.terms if t.kind == "covariate")

    @property
    def has_interactions(self) -> bool:
        return any(t.kind == "interaction" for t in self.terms)

    def index_of(self, term: Term) -> int:
        return self.terms.index(term)

    def check(self, p: int) -> None:
        for t in self.terms:
            if t.kind in ("covariate", "interaction") and not 0 <= t.index < p:
                raise ValidationError(f"term {t} refers to covariate outside 0..{p - 1}")
        if self.center is not None and self.center.shape != (p,):
            raise ValidationError(f"centering profile has length {self.center.size}, expected {p}")


def dependent_columns(A: np.ndarray, tol: float = RANK_TOL) -> list:
    """Indices of columns of ``A`` that are linearly dependent on earlier pivots.

    Uses column-pivoted QR; a pivot below ``tol`` times the largest one marks
    rank deficiency.
    """
    n, k = A.shape
    if k == 0:
        return []
    if n == 0:
        return list(range(k))
    _, R, piv = sla.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return list(range(k))
    rank = int(np.sum(diag > tol * diag[0]))
    return sorted(int(c) for c in piv[rank:])


def build_design_matrix(dataset: Dataset, spec: DesignSpec, check_rank: bool = True) -> np.ndarray:
    spec.check(dataset.p)
    z = dataset.treated.astype(float)
    Xc = dataset.X if spec.center is None else dataset.X - spec.center
    cols = []
    for t in spec.terms:
        if t.kind == "intercept":
            cols.append(np.ones(dataset.n))
        elif t.kind == "treatment":
            cols.append(z)
        elif t.kind == "covariate":
            cols.append(dataset.X[:, t.index])
        else:
            cols.append(z * Xc[:, t.index])
    D = np.column_stack(cols)
    if check_rank:
        _require_full_rank(D, [t.label(dataset.covariate_names) for t in spec.terms])
    return D


def _require_full_rank(D: np.ndarray, labels=None) -> None:
    n, k = D.shape
    if n < k:
        raise RankDeficiencyError(f"{n} rows cannot identify {k} columns", range(n, k))
    dep = dependent_columns(D)
    if dep:
        names = [labels[c] for c in dep] if labels else dep
        raise RankDeficiencyError(f"design is rank deficient; dependent columns {names}", dep)


@dataclass(frozen=True, eq=False)
class OlsFit:
    coefficients: np.ndarray
    residuals: np.ndarray


def qr_factor(D: np.ndarray):
    """Economic QR of a full-column-rank design, raising on rank deficiency."""
    _require_full_rank(D)
    Q, R = np.linalg.qr(D, mode="reduced")
    return Q, R


def ols_fit(design: np.ndarray, outcome) -> OlsFit:
    D = np.asarray(design, dtype=float)
    y = np.asarray(outcome, dtype=float)
    if D.ndim != 2 or y.shape != (D.shape[0],):
        raise ValidationError("design rows and outcome length differ")
    Q, R = qr_factor(D)
    beta = sla.solve_triangular(R, Q.T @ y)
    return OlsFit(_frozen(beta), _frozen(y - D @ beta))


def linear_functional(D: np.ndarray, c) -> np.ndarray:
    """Vector ``a`` with ``a @ y == c @ ols_coefficients(D, y)`` for every ``y``.

    This is ``D (D'D)^{-1} c`` computed through the QR factors, i.e. the
    minimum-norm solution of ``D' a = c``.
    """
    Q, R = qr_factor(D)
    v = sla.solve_triangular(R, np.asarray(c, dtype=float), trans="T")
    return Q @ v


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Per-unit weights with treated and control groups each averaging one.

    ``treated`` is the membership mask the normalization refers to. ``info``
    carries solver diagnostics and is ignored by comparisons.
    """

    weights: np.ndarray
    treated: np.ndarray
    method: Method
    target: str = "ATT"
    info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        w = _frozen(self.weights)
        t = np.array(self.treated, dtype=bool, copy=True)
        t.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "treated", t)
        object.__setattr__(self, "method", Method(self.method))
        if w.shape != t.shape:
            raise ValidationError("weights and treatment mask differ in length")
        if not np.all(np.isfinite(w)):
            raise ValidationError("non-finite weight")
        for mask, label in ((t, "treated"), (~t, "control")):
            n_g = int(mask.sum())
            s = float(w[mask].sum())
            if abs(s - n_g) > NORMALIZATION_TOL * max(1.0, n_g):
                raise ValidationError(f"{label} weights sum to {s}, expected {n_g}")
        if self.method in NONNEGATIVE_METHODS and np.any(w < 0):
            raise ValidationError(f"{self.method.value} weights must be non-negative")

    @classmethod
    def uniform(cls, treated) -> "WeightVector":
        return cls(np.ones(len(treated)), treated, Method.UNIFORM)

    @classmethod
    def from_groups(cls, treated, w_treated, w_control, method, info=None) -> "WeightVector":
        treated = np.asarray(treated, dtype=bool)
        w = np.empty(treated.size)
        w[treated] = w_treated
        w[~treated] = w_control
        return cls(w, treated, method, info=dict(info or {}))

    def group(self, group) -> np.ndarray:
        group = Group(group)
        if group is Group.TREATED:
            return self.weights[self.treated]
        if group is Group.CONTROL:
            return self.weights[~self.treated]
        return self.weights

    def __len__(self):
        return self.weights.size


def conform(dataset: Dataset, weights: Optional[WeightVector]) -> WeightVector:
    if weights is None:
        return WeightVector.uniform(dataset.treated)
    if len(weights) != dataset.n:
        raise ValidationError(f"{len(weights)} weights for {dataset.n} units")
    if not np.array_equal(weights.treated, dataset.treated):
        raise ValidationError("weight vector group membership does not match dataset")
    return weights


def group_means(dataset: Dataset, weights: Optional[WeightVector] = None):
    """Weighted covariate profiles ``(treated, control)``; ``(1/n_g) sum w_i x_i``."""
    w = conform(dataset, weights).weights
    t = dataset.treated
    treated = w[t] @ dataset.X[t] / dataset.n_treated
    control = w[~t] @ dataset.X[~t] / dataset.n_control
    return treated, control
