"""Balance dashboard: weighted means against a target, ESS, negative weights,
the implied target profile and sample-boundedness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import Dataset, Group, Method, WeightVector, conform, group_means
from .errors import ValidationError


class BalanceRow(NamedTuple):
    name: str
    treated: float
    control: float
    target: float
    sd_t: float  # standardized difference, treated vs target
    sd_c: float  # standardized difference, control vs target


@dataclass(frozen=True)
class BalanceTable:
    rows: tuple
    ess_treated: float
    ess_control: float
    nominal_treated: int
    nominal_control: int
    # ESS lost its "equivalent count" reading because some weights are negative
    ess_caveat: bool = False

    def row(self, name: str) -> BalanceRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


@dataclass(frozen=True)
class NegativeWeightReport:
    count: int
    ids: tuple
    total_negative_mass: float
    max_magnitude_id: Optional[str]


class Boundedness(NamedTuple):
    outside: bool
    interval: tuple
    extrapolation_capable: bool


def effective_sample_size(weights: WeightVector, group) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2`` within a group."""
    w = weights.group(group)
    ss = float(w @ w)
    if ss == 0.0:
        raise ValidationError(f"all {Group(group).value} weights are zero")
    return float(w.sum()) ** 2 / ss


def pooled_sd(dataset: Dataset) -> np.ndarray:
    """Unweighted pooled standard deviation, sqrt((s_t^2 + s_c^2) / 2)."""
    t = dataset.treated
    var_t = dataset.X[t].var(axis=0, ddof=1)
    var_c = dataset.X[~t].var(axis=0, ddof=1)
    return np.sqrt((var_t + var_c) / 2.0)


def _std_diff(gap: float, sd: float) -> float:
    if sd > 0:
        return gap / sd
    if gap == 0:
        return 0.0
    return float(np.copysign(np.inf, gap))


def balance_table(dataset: Dataset, weights: Optional[WeightVector] = None, target_profile=None) -> BalanceTable:
    weights = conform(dataset, weights)
    mt, mc = group_means(dataset, weights)
    if target_profile is None:
        target_profile = dataset.X[dataset.treated].mean(axis=0)
    target = np.asarray(target_profile, dtype=float).ravel()
    if target.shape != (dataset.p,):
        raise ValidationError(f"target profile must have length {dataset.p}")
    sd = pooled_sd(dataset)
    rows = tuple(
        BalanceRow(
            name, float(mt[j]), float(mc[j]), float(target[j]),
            _std_diff(mt[j] - target[j], sd[j]), _std_diff(mc[j] - target[j], sd[j]),
        )
        for j, name in enumerate(dataset.covariate_names)
    )
    return BalanceTable(
        rows,
        effective_sample_size(weights, Group.TREATED),
        effective_sample_size(weights, Group.CONTROL),
        dataset.n_treated,
        dataset.n_control,
        ess_caveat=bool(np.any(weights.weights < 0)),
    )


def implied_target_profile(dataset: Dataset, uri: WeightVector) -> np.ndarray:
    """Covariate profile at which single-regression weights balance the groups."""
    if uri.method is not Method.URI:
        raise ValidationError(f"implied target profile needs URI weights, got {uri.method.value}")
    mt, mc = group_means(dataset, uri)
    return (mt + mc) / 2.0


def negative_weight_report(weights: WeightVector, ids=None) -> NegativeWeightReport:
    w = weights.weights
    if ids is None:
        ids = [str(i) for i in range(w.size)]
    neg = np.flatnonzero(w < 0)
    # magnitude descending, then id for ties
    order = sorted(neg, key=lambda i: (-abs(w[i]), ids[i]))
    out = tuple(ids[i] for i in order)
    return NegativeWeightReport(
        count=len(out),
        ids=out,
        total_negative_mass=float(w[neg].sum()) if neg.size else 0.0,
        max_magnitude_id=out[0] if out else None,
    )


def outcome_contrast_range(dataset: Dataset) -> tuple:
    """``[min, max]`` over all treated-minus-control outcome differences."""
    yt = dataset.y[dataset.treated]
    yc = dataset.y[~dataset.treated]
    return float(yt.min() - yc.max()), float(yt.max() - yc.min())


def sample_boundedness_check(dataset: Dataset, weights: WeightVector, estimate) -> Boundedness:
    att = float(getattr(estimate, "att", estimate))
    lo, hi = outcome_contrast_range(dataset)
    slack = 1e-9 * max(1.0, abs(lo), abs(hi))
    return Boundedness(
        outside=not (lo - slack <= att <= hi + slack),
        interval=(lo, hi),
        extrapolation_capable=bool(np.any(conform(dataset, weights).weights < 0)),
    )
