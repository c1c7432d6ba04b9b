"""The weighted-contrast ATT estimator, the per-method pipeline and the
dashboard renderers (text, json, csv, svg)."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, DesignSpec, Group, Method, WeightVector, conform
from .diagnostics import (
    BalanceRow,
    BalanceTable,
    NegativeWeightReport,
    balance_table,
    negative_weight_report,
    sample_boundedness_check,
)
from .errors import ValidationError
from .implied import mri_weights, uri_weights
from .matching import pair_match, profile_match
from .weighting import DEFAULT_DELTA, SbwConfig, fit_propensity_logistic, ipw_att_weights, sbw_solve

FORMATS = ("text", "json", "csv", "svg")
METHOD_ORDER = tuple(Method)


@dataclass(frozen=True)
class Estimate:
    att: float
    method: Method
    n_used: tuple  # (treated, control) units with nonzero weight
    diagnostics: Optional[BalanceTable]
    sample_bounded: bool
    weights: Optional[WeightVector] = field(default=None, compare=False, repr=False)


def weighted_contrast(dataset: Dataset, weights: Optional[WeightVector] = None, target_profile=None) -> Estimate:
    """``(1/n_t) sum_t w y - (1/n_c) sum_c w y``; the same formula for every method."""
    weights = conform(dataset, weights)
    w, y, t = weights.weights, dataset.y, dataset.treated
    att = float(w[t] @ y[t] / dataset.n_treated - w[~t] @ y[~t] / dataset.n_control)
    bounded = sample_boundedness_check(dataset, weights, att)
    return Estimate(
        att=att,
        method=weights.method,
        n_used=(int(np.count_nonzero(w[t])), int(np.count_nonzero(w[~t]))),
        diagnostics=balance_table(dataset, weights, target_profile),
        sample_bounded=not bounded.outside,
        weights=weights,
    )


@dataclass(frozen=True)
class PipelineOptions:
    delta: object = DEFAULT_DELTA          # SBW tolerance (sd units)
    tolerance: object = 0.05               # profile-matching tolerance (sd units)
    metric: str = "mahalanobis"
    covariates: Optional[tuple] = None     # covariate indices used by the regressions
    target: str = "att"
    seed: Optional[int] = None             # accepted for interface stability; all methods are deterministic


def make_weights(dataset: Dataset, method, options: PipelineOptions = PipelineOptions()) -> WeightVector:
    method = Method(method)
    if options.target.lower() != "att":
        raise ValidationError(f"unsupported target {options.target!r}; only 'att' is implemented")
    if method is Method.UNIFORM:
        return WeightVector.uniform(dataset.treated)
    if method is Method.URI:
        return uri_weights(dataset, DesignSpec.uri(dataset.p, options.covariates))
    if method is Method.MRI:
        return mri_weights(dataset, DesignSpec.uri(dataset.p, options.covariates))
    if method is Method.IPW:
        return ipw_att_weights(fit_propensity_logistic(dataset), dataset)
    if method is Method.SBW:
        return sbw_solve(dataset, None, SbwConfig(delta=options.delta))
    if method is Method.PAIR_MATCH:
        return pair_match(dataset, options.metric).weights
    return profile_match(dataset, None, options.tolerance).weights


def pipeline(dataset: Dataset, method, options: PipelineOptions = PipelineOptions()):
    """Weights, then diagnostics, then the contrast."""
    weights = make_weights(dataset, method, options)
    est = weighted_contrast(dataset, weights)
    neg = negative_weight_report(weights, dataset.ids)
    return est, est.diagnostics, neg


# --- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class Report:
    method: str
    att: float
    ess: tuple       # (treated, control)
    nominal: tuple   # (treated, control)
    balance: tuple   # BalanceRow
    negative_count: int
    negative_ids: tuple
    sample_bounded: bool
    weights: Optional[tuple] = field(default=None, compare=False, repr=False)  # control weights, svg only

    @classmethod
    def from_results(cls, estimate: Estimate, table: BalanceTable, neg: NegativeWeightReport) -> "Report":
        w = estimate.weights
        return cls(
            method=estimate.method.value,
            att=estimate.att,
            ess=(table.ess_treated, table.ess_control),
            nominal=(table.nominal_treated, table.nominal_control),
            balance=tuple(table.rows),
            negative_count=neg.count,
            negative_ids=tuple(neg.ids),
            sample_bounded=estimate.sample_bounded,
            weights=None if w is None else tuple(float(x) for x in w.group(Group.CONTROL)),
        )

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "att": self.att,
            "ess": {"treated": self.ess[0], "control": self.ess[1]},
            "nominal": {"treated": self.nominal[0], "control": self.nominal[1]},
            "balance": [r._asdict() for r in self.balance],
            "negative_weights": {"count": self.negative_count, "ids": list(self.negative_ids)},
            "sample_bounded": self.sample_bounded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(
            method=d["method"],
            att=d["att"],
            ess=(d["ess"]["treated"], d["ess"]["control"]),
            nominal=(d["nominal"]["treated"], d["nominal"]["control"]),
            balance=tuple(BalanceRow(**r) for r in d["balance"]),
            negative_count=d["negative_weights"]["count"],
            negative_ids=tuple(d["negative_weights"]["ids"]),
            sample_bounded=d["sample_bounded"],
        )


def format_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def _as_list(results) -> list:
    if isinstance(results, Report):
        return [results]
    return list(results)


def _balance_lines(r: Report) -> list:
    width = max([9] + [len(b.name) for b in r.balance])
    out = [f"== {r.method} ==",
           f"{'covariate':<{width}}  {'treated':>10}  {'control':>10}  {'target':>10}  {'std.t':>8}  {'std.c':>8}"]
    for b in r.balance:
        out.append(
            f"{b.name:<{width}}  {format_number(b.treated):>10}  {format_number(b.control):>10}"
            f"  {format_number(b.target):>10}  {format_number(b.sd_t):>8}  {format_number(b.sd_c):>8}"
        )
    out.append(f"effective / nominal n   treated {format_number(r.ess[0])} / {r.nominal[0]}"
               f"   control {format_number(r.ess[1])} / {r.nominal[1]}")
    return out


def _text(reports: Sequence[Report]) -> str:
    out = []
    for r in reports:
        out.extend(_balance_lines(r))
        out.append(f"ATT estimate            {format_number(r.att)}")
        out.append(f"negative weights        {r.negative_count}")
        out.append(f"sample bounded          {'yes' if r.sample_bounded else 'NO'}")
        out.append("")
    return "\n".join(out)


def render_balance(results, format: str = "text") -> bytes:
    """Balance tables only (means, standardized differences, ESS)."""
    reports = _as_list(results)
    if format == "json":
        body = [{"method": r.method,
                 "ess": {"treated": r.ess[0], "control": r.ess[1]},
                 "nominal": {"treated": r.nominal[0], "control": r.nominal[1]},
                 "balance": [b._asdict() for b in r.balance]} for r in reports]
        return (json.dumps(body, indent=2) + "\n").encode("utf-8")
    if format == "csv":
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["method", "covariate", "treated", "control", "target", "sd_t", "sd_c"])
        for r in reports:
            for b in r.balance:
                wr.writerow([r.method, b.name, *(repr(float(v)) for v in b[1:])])
        return buf.getvalue().encode("utf-8")
    if format != "text":
        raise ValidationError(f"unknown balance format {format!r}; choose from text, json, csv")
    lines = []
    for r in reports:
        lines.extend(_balance_lines(r))
        lines.append("")
    return "\n".join(lines).encode("utf-8")


CSV_FIELDS = (
    "method", "att", "ess_treated", "ess_control", "nominal_treated", "nominal_control",
    "negative_count", "negative_ids", "sample_bounded",
    "covariate", "treated", "control", "target", "sd_t", "sd_c",
)


def _csv(reports: Sequence[Report]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_FIELDS)
    for r in reports:
        head = [r.method, repr(float(r.att)), repr(float(r.ess[0])), repr(float(r.ess[1])),
                r.nominal[0], r.nominal[1], r.negative_count, ";".join(r.negative_ids),
                int(r.sample_bounded)]
        rows = r.balance or [None]
        for b in rows:
            tail = [""] * 6 if b is None else [b.name, *(repr(float(v)) for v in b[1:])]
            wr.writerow(head + tail)
    return buf.getvalue()


def parse_csv_report(data) -> list:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reports: dict = {}
    for row in csv.DictReader(io.StringIO(data)):
        key = row["method"]
        if key not in reports:
            reports[key] = dict(
                method=key, att=float(row["att"]),
                ess=(float(row["ess_treated"]), float(row["ess_control"])),
                nominal=(int(row["nominal_treated"]), int(row["nominal_control"])),
                balance=[], negative_count=int(row["negative_count"]),
                negative_ids=tuple(i for i in row["negative_ids"].split(";") if i),
                sample_bounded=bool(int(row["sample_bounded"])),
            )
        if row["covariate"]:
            reports[key]["balance"].append(BalanceRow(
                row["covariate"], *(float(row[k]) for k in ("treated", "control", "target", "sd_t", "sd_c"))))
    return [Report(**{**r, "balance": tuple(r["balance"])}) for r in reports.values()]


def parse_json_report(data) -> list:
    obj = json.loads(data)
    if isinstance(obj, dict):
        obj = [obj]
    return [Report.from_dict(d) for d in obj]


PALETTE = ("#1b6ca8", "#d1495b", "#edae49", "#00798c", "#66a182", "#8d6a9f", "#2e4057")


def _svg(reports: Sequence[Report]) -> str:
    W, H = 960, 480
    el = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
          f'<rect width="{W}" height="{H}" fill="white"/>',
          '<g font-family="sans-serif" font-size="12">']
    # left panel: control (and treated) means relative to target, in sd units
    x0, x1, top, bot = 140, 450, 50, 430
    el.append('<text x="60" y="28" font-size="14">Covariate means vs target (std. diff.)</text>')
    names = []
    for r in reports:
        for b in r.balance:
            if b.name not in names:
                names.append(b.name)
    vals = [v for r in reports for b in r.balance for v in (b.sd_t, b.sd_c) if math.isfinite(v)]
    lim = max([0.25] + [abs(v) for v in vals])
    sx = lambda v: x0 + (max(-lim, min(lim, v)) + lim) / (2 * lim) * (x1 - x0)
    el.append(f'<line x1="{sx(0):.2f}" y1="{top}" x2="{sx(0):.2f}" y2="{bot}" stroke="#444" stroke-dasharray="4 3"/>')
    el.append(f'<text x="{sx(0):.2f}" y="{bot + 18}" text-anchor="middle">target</text>')
    el.append(f'<text x="{x0}" y="{bot + 18}" text-anchor="middle">{format_number(-lim)}</text>')
    el.append(f'<text x="{x1}" y="{bot + 18}" text-anchor="middle">{format_number(lim)}</text>')
    step = (bot - top) / max(1, len(names))
    for k, name in enumerate(names):
        cy = top + (k + 0.5) * step
        el.append(f'<text x="{x0 - 10}" y="{cy + 4:.2f}" text-anchor="end">{_esc(name)}</text>')
        el.append(f'<line x1="{x0}" y1="{cy:.2f}" x2="{x1}" y2="{cy:.2f}" stroke="#ddd"/>')
        for m, r in enumerate(reports):
            b = next((b for b in r.balance if b.name == name), None)
            if b is None:
                continue
            dy = (m - (len(reports) - 1) / 2) * min(8.0, step / (len(reports) + 1))
            col = PALETTE[m % len(PALETTE)]
            el.append(f'<circle cx="{sx(b.sd_c):.2f}" cy="{cy + dy:.2f}" r="4" fill="{col}"/>')
            el.append(f'<rect x="{sx(b.sd_t) - 3:.2f}" y="{cy + dy - 3:.2f}" width="6" height="6" '
                      f'fill="none" stroke="{col}"/>')
    # right panel: histogram of control weights
    hx0, hx1 = 540, 920
    el.append('<text x="540" y="28" font-size="14">Control weight distribution</text>')
    ws = [np.asarray(r.weights) for r in reports if r.weights]
    if ws:
        allw = np.concatenate(ws)
        lo, hi = float(allw.min()), float(allw.max())
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, 21)
        hists = [np.histogram(w, bins=edges)[0] for w in ws]
        peak = max(1, max(int(h.max()) for h in hists))
        bx = lambda v: hx0 + (v - lo) / (hi - lo) * (hx1 - hx0)
        by = lambda c: bot - c / peak * (bot - top)
        el.append(f'<line x1="{hx0}" y1="{bot}" x2="{hx1}" y2="{bot}" stroke="#444"/>')
        if lo < 0 < hi:
            el.append(f'<line x1="{bx(0):.2f}" y1="{top}" x2="{bx(0):.2f}" y2="{bot}" stroke="#d1495b" '
                      'stroke-dasharray="2 2"/>')
        el.append(f'<text x="{hx0}" y="{bot + 18}" text-anchor="middle">{format_number(lo)}</text>')
        el.append(f'<text x="{hx1}" y="{bot + 18}" text-anchor="middle">{format_number(hi)}</text>')
        k = 0
        for m, r in enumerate(reports):
            if not r.weights:
                continue
            h = hists[k]
            k += 1
            pts = [f"{bx(edges[0]):.2f},{bot:.2f}"]
            for i, c in enumerate(h):
                pts.append(f"{bx(edges[i]):.2f},{by(c):.2f}")
                pts.append(f"{bx(edges[i + 1]):.2f},{by(c):.2f}")
            pts.append(f"{bx(edges[-1]):.2f},{bot:.2f}")
            el.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{PALETTE[m % len(PALETTE)]}" '
                      'stroke-width="1.5"/>')
    # legend
    for m, r in enumerate(reports):
        y = 60 + 16 * m
        col = PALETTE[m % len(PALETTE)]
        el.append(f'<circle cx="{hx1 - 110}" cy="{y - 4}" r="4" fill="{col}"/>')
        el.append(f'<text x="{hx1 - 100}" y="{y}">{_esc(r.method)} ATT {format_number(r.att)}</text>')
    el.append("</g></svg>")
    return "\n".join(el) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_report(results, format: str = "text") -> bytes:
    if format not in FORMATS:
        raise ValidationError(f"unknown report format {format!r}; choose from {FORMATS}")
    reports = _as_list(results)
    if format == "text":
        return _text(reports).encode("utf-8")
    if format == "json":
        body = reports[0].to_dict() if isinstance(results, Report) else [r.to_dict() for r in reports]
        return (json.dumps(body, indent=2) + "\n").encode("utf-8")
    if format == "csv":
        return _csv(reports).encode("utf-8")
    return _svg(reports).encode("utf-8")


def run_methods(dataset: Dataset, methods, options: PipelineOptions = PipelineOptions()) -> list:
    """Reports for several methods, always in canonical method order."""
    wanted = {Method(m) for m in methods}
    out = []
    for m in METHOD_ORDER:
        if m in wanted:
            out.append(Report.from_results(*pipeline(dataset, m, options)))
    return out
