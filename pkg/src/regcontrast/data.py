"""CSV ingestion/emission and the synthetic running-example generator.

Generator streams: ``SeedSequence(seed).spawn(3)`` gives independent PCG64
streams for treated covariates, control covariates and outcome noise, in
that order, so changing one group's size leaves the other group's draws
untouched.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Dataset
from .errors import ValidationError


@dataclass(frozen=True)
class CsvSchema:
    id: str = "id"
    treatment: str = "treatment"
    outcome: str = "outcome"
    covariates: Optional[tuple] = None  # None: every other column


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ValidationError(f"row {row}, column {col!r}: non-numeric value {text!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"row {row}, column {col!r}: non-finite value {text!r}")
    return v


def read_csv_text(text: str, schema: CsvSchema = CsvSchema()) -> Dataset:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    covs = schema.covariates
    if covs is None:
        covs = tuple(c for c in header if c not in (schema.id, schema.treatment, schema.outcome))
    missing = [c for c in (schema.id, schema.treatment, schema.outcome, *covs) if c not in header]
    if missing:
        raise ValidationError(f"missing column(s) {missing}; header is {header}")
    if not covs:
        raise ValidationError("no covariate columns")
    ids, z, X, y = [], [], [], []
    seen = {}
    for row_no, rec in enumerate(reader, start=1):
        if None in rec or any(rec[c] is None for c in header):
            raise ValidationError(f"row {row_no}: wrong number of fields")
        uid = rec[schema.id].strip()
        if not uid:
            raise ValidationError(f"row {row_no}, column {schema.id!r}: empty id")
        if uid in seen:
            raise ValidationError(f"row {row_no}: duplicate id {uid!r} (first seen at row {seen[uid]})")
        seen[uid] = row_no
        tv = rec[schema.treatment].strip()
        if tv not in ("0", "1", "0.0", "1.0"):
            raise ValidationError(
                f"row {row_no}, column {schema.treatment!r}: treatment must be 0 or 1, got {tv!r}"
            )
        ids.append(uid)
        z.append(tv.startswith("1"))
        X.append([_parse_float(rec[c], row_no, c) for c in covs])
        y.append(_parse_float(rec[schema.outcome], row_no, schema.outcome))
    if not ids:
        raise ValidationError("no data rows")
    return Dataset(ids, np.array(z, dtype=bool), np.array(X, dtype=float), np.array(y), covs)


def load_csv(path, schema: CsvSchema = CsvSchema()) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    return read_csv_text(path.read_text(encoding="utf-8"), schema)


def dataset_to_csv(dataset: Dataset, schema: CsvSchema = CsvSchema()) -> str:
    """Lossless CSV encoding (floats written with ``repr``)."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([schema.id, schema.treatment, *dataset.covariate_names, schema.outcome])
    for i in range(dataset.n):
        wr.writerow([dataset.ids[i], int(dataset.treated[i]),
                     *(repr(float(v)) for v in dataset.X[i]), repr(float(dataset.y[i]))])
    return buf.getvalue()


def write_csv(dataset: Dataset, path, schema: CsvSchema = CsvSchema()) -> None:
    Path(path).write_text(dataset_to_csv(dataset, schema), encoding="utf-8")


@dataclass(frozen=True)
class GeneratorConfig:
    """Two-covariate observational study shaped like the health-insurance example.

    Income is in thousands of dollars; outcome in outcome units (thousands).
    ``control_mean_profile`` visits (4.1) is not a quoted figure but a chosen
    default. When ``outlier`` is set, that unit replaces one draw of its group
    so the group size stays as configured.
    """

    n_treated: int = 100
    n_control: int = 200
    treated_mean_profile: tuple = (27.2, 4.6)
    control_mean_profile: tuple = (45.0, 4.1)
    covariate_sds: tuple = (16.0, 1.5)
    outlier: Optional[tuple] = ((264.0, 4.0), "control")
    true_att: float = -5.0
    outcome_model: str = "curved"
    seed: int = 0
    noise_sd: float = 1.0
    covariate_names: tuple = ("income", "visits")
    # baseline(x) = intercept + slopes @ x [+ curvature * (income / 10)^2]
    intercept: float = 2.0
    slopes: tuple = (0.02, 0.5)
    curvature: float = 0.04

    def __post_init__(self):
        if self.n_treated < 2 or self.n_control < 2:
            raise ValidationError("group sizes must be at least 2")
        p = len(self.covariate_names)
        for name in ("treated_mean_profile", "control_mean_profile", "covariate_sds", "slopes"):
            if len(getattr(self, name)) != p:
                raise ValidationError(f"{name} must have length {p}")
        if any(s <= 0 for s in self.covariate_sds):
            raise ValidationError("covariate_sds must be positive")
        if self.outcome_model not in ("linear", "curved"):
            raise ValidationError("outcome_model must be 'linear' or 'curved'")
        if self.outlier is not None:
            prof, group = self.outlier
            if len(prof) != p or group not in ("treated", "control"):
                raise ValidationError("outlier must be (profile of length p, 'treated'|'control')")

    def baseline(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = self.intercept + X @ np.asarray(self.slopes, dtype=float)
        if self.outcome_model == "curved":
            out = out + self.curvature * (X[:, 0] / 10.0) ** 2
        return out


def _draw_group(rng: np.random.Generator, n: int, mean, sd) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    X = rng.normal(mean, sd, size=(n, mean.size))
    # income (first column) is truncated to stay strictly positive: redraw
    bad = X[:, 0] <= 0
    while bad.any():
        X[bad, 0] = rng.normal(mean[0], sd[0], size=int(bad.sum()))
        bad = X[:, 0] <= 0
    return X


def generate_synthetic_example(config: GeneratorConfig = GeneratorConfig()) -> Dataset:
    ss = np.random.SeedSequence(int(config.seed) & 0xFFFFFFFFFFFFFFFF)
    g_t, g_c, g_y = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3))
    n_t, n_c = config.n_treated, config.n_control
    out_group = None if config.outlier is None else config.outlier[1]
    Xt = _draw_group(g_t, n_t - (out_group == "treated"), config.treated_mean_profile, config.covariate_sds)
    Xc = _draw_group(g_c, n_c - (out_group == "control"), config.control_mean_profile, config.covariate_sds)
    if out_group == "treated":
        Xt = np.vstack([Xt, np.asarray(config.outlier[0], dtype=float)])
    elif out_group == "control":
        Xc = np.vstack([Xc, np.asarray(config.outlier[0], dtype=float)])
    X = np.vstack([Xt, Xc])
    z = np.r_[np.ones(n_t, dtype=bool), np.zeros(n_c, dtype=bool)]
    noise = g_y.normal(0.0, config.noise_sd, size=n_t + n_c)
    y = config.baseline(X) + config.true_att * z + noise
    ids = [f"t{i:04d}" for i in range(n_t)] + [f"c{i:04d}" for i in range(n_c)]
    return Dataset(ids, z, X, y, config.covariate_names)
