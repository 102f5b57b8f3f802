"""Attack success rate, boundary-band occupancy, runtime benchmarks and report tables."""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .constraints import ConstraintSet, LinearConstraint, satisfies_all, violation_mask

DEFAULT_EPS_GRID = (0.3, 0.4, 0.5)
DEFAULT_P_GRID = (0.01, 0.05, 0.1)
MISSING = "n/a"
MODEL_ORDER = ("AdvWGAN", "P-AdvWGAN", "C-AdvWGAN", "AdvTVAE", "P-AdvTVAE", "C-AdvTVAE")


# --- attack success rate ---------------------------------------------------------

@dataclass
class Outcomes:
    flip: np.ndarray
    delta_norm: np.ndarray
    satisfied: np.ndarray
    correct_before: np.ndarray


def outcomes(examples, cset: ConstraintSet) -> Outcomes:
    """Per-example flip / norm / satisfaction arrays for any sequence of attack examples."""
    if len(examples) == 0:
        raise ValueError("no attack examples")
    if hasattr(examples, "adversarial") and hasattr(examples, "pred_after"):
        # array-backed attack set
        labels = examples.labels
        return Outcomes(
            examples.pred_after != labels,
            examples.delta_norms,
            ~violation_mask(cset, examples.adversarial.columns),
            examples.pred_before == labels,
        )
    return Outcomes(
        np.array([e.pred_after != e.label for e in examples]),
        np.array([float(np.linalg.norm(e.delta)) for e in examples]),
        np.array([satisfies_all(cset, e.adversarial) for e in examples]),
        np.array([e.pred_before == e.label for e in examples]),
    )


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError("epsilon must be positive")


def asr(examples, cset: ConstraintSet, eps: float) -> float:
    """Share of originals whose counterpart flips, satisfies every constraint and has ``||delta|| < eps``."""
    _check_eps(eps)
    o = outcomes(examples, cset)
    return float(np.mean(o.flip & o.satisfied & (o.delta_norm < eps)))


def asr_valid(examples, cset: ConstraintSet, eps: float) -> float:
    """ASR restricted to originals the target classified correctly (nan if there are none)."""
    _check_eps(eps)
    o = outcomes(examples, cset)
    if not o.correct_before.any():
        return math.nan
    hit = o.flip & o.satisfied & (o.delta_norm < eps)
    return float(np.mean(hit[o.correct_before]))


@dataclass
class AttackReport:
    model: str
    dataset: str
    n: int
    clean_error: float
    eps_grid: tuple[float, ...]
    asr: dict[float, float]
    asr_valid: dict[float, float]
    violation_rate: float
    flip: np.ndarray = field(repr=False)
    delta_norm: np.ndarray = field(repr=False)
    satisfied: np.ndarray = field(repr=False)

    def within_budget(self, eps: float) -> np.ndarray:
        return self.delta_norm < eps


def attack_report(examples, cset: ConstraintSet, model: str, dataset: str, clean_error: float, eps_grid: Sequence[float] = DEFAULT_EPS_GRID) -> AttackReport:
    o = outcomes(examples, cset)
    grid = tuple(sorted(float(e) for e in eps_grid))
    for e in grid:
        _check_eps(e)
    hits = o.flip & o.satisfied
    rates = {e: float(np.mean(hits & (o.delta_norm < e))) for e in grid}
    valid = {}
    for e in grid:
        valid[e] = float(np.mean((hits & (o.delta_norm < e))[o.correct_before])) if o.correct_before.any() else math.nan
    return AttackReport(model, dataset, len(o.flip), float(clean_error), grid, rates, valid, float(np.mean(~o.satisfied)), o.flip, o.delta_norm, o.satisfied)


# --- boundary band -----------------------------------------------------------------

def band_width(r1: float, r2: float, p: float) -> float:
    """Band width ``sqrt((r1 p)^2 + (r2 p)^2)``; at ``p = 1`` the diagonal of the range rectangle."""
    if not p > 0:
        raise ValueError("p must be positive")
    if r1 < 0 or r2 < 0:
        raise ValueError("ranges must be non-negative")
    return math.hypot(r1 * p, r2 * p)


def _column(records, name: str) -> np.ndarray:
    if isinstance(records, Mapping):
        return np.asarray(records[name], dtype=np.float64)
    return np.array([r[name] for r in records], dtype=np.float64)


def boundary_occupancy(records, constraint: LinearConstraint, ranges: Mapping[str, tuple[float, float]], p: float) -> float:
    """Percentage of records within half a band width (perpendicular distance) of the constraint line."""
    if not isinstance(constraint, LinearConstraint) or len(constraint.terms) != 2:
        raise ValueError("boundary occupancy needs a linear constraint over exactly two features")
    (n1, w1), (n2, w2) = constraint.terms
    x1, x2 = _column(records, n1), _column(records, n2)
    if x1.size == 0:
        raise ValueError("no records")
    r1 = ranges[n1][1] - ranges[n1][0]
    r2 = ranges[n2][1] - ranges[n2][0]
    half = band_width(r1, r2, p) / 2.0
    dist = np.abs(w1 * x1 + w2 * x2 + constraint.bias) / math.hypot(w1, w2)
    return float(100.0 * np.mean(dist <= half))


@dataclass
class BoundaryReport:
    model: str
    dataset: str
    p_grid: tuple[float, ...]
    rows: list[tuple[str, float, float, float]]  # (constraint id, p, width, occupancy %)

    def occupancy(self, p: float) -> float:
        """Mean occupancy over the report's constraints at ``p``."""
        vals = [occ for _, q, _, occ in self.rows if q == p]
        return float(np.mean(vals)) if vals else math.nan


def boundary_report(records, cset: ConstraintSet, ranges: Mapping[str, tuple[float, float]], model: str, dataset: str, p_grid: Sequence[float] = DEFAULT_P_GRID) -> BoundaryReport:
    """Occupancy for every two-feature linear constraint of the set."""
    grid = tuple(sorted(float(p) for p in p_grid))
    rows = []
    for c in cset.linear:
        if len(c.terms) != 2:
            continue
        (n1, _), (n2, _) = c.terms
        for p in grid:
            w = band_width(ranges[n1][1] - ranges[n1][0], ranges[n2][1] - ranges[n2][0], p)
            rows.append((c.id, p, w, boundary_occupancy(records, c, ranges, p)))
    return BoundaryReport(model, dataset, grid, rows)


# --- runtime -----------------------------------------------------------------------

@dataclass
class RuntimeReport:
    model: str
    dataset: str
    kind: str  # "train" | "sample"
    samples: list[float]

    @property
    def median(self) -> float:
        return statistics.median(self.samples)

    @property
    def minimum(self) -> float:
        return min(self.samples)

    @property
    def maximum(self) -> float:
        return max(self.samples)


def runtime_bench(task: Callable[[], object], repeats: int = 5, model: str = "", dataset: str = "", kind: str = "sample", clock=time.perf_counter) -> RuntimeReport:
    """Time ``task`` ``repeats`` times in sequence; an exception discards all timings."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    samples = []
    for _ in range(repeats):
        t0 = clock()
        task()
        samples.append(max(0.0, clock() - t0))
    return RuntimeReport(model, dataset, kind, samples)


# --- rendering -----------------------------------------------------------------------

def _fmt(x: float, digits: int = 2) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return MISSING
    return f"{x:.{digits}f}"


def _csv_num(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def _model_rows(labels) -> list[str]:
    known = [m for m in MODEL_ORDER if m in labels]
    return known + sorted(m for m in labels if m not in MODEL_ORDER)


def _markdown(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def render_asr(reports: Sequence[AttackReport]) -> tuple[str, str]:
    """Markdown tables (one per epsilon) and a long-format CSV."""
    datasets = sorted({r.dataset for r in reports})
    eps_values = sorted({e for r in reports for e in r.eps_grid})
    by_key = {(r.model, r.dataset): r for r in reports}
    models = _model_rows({r.model for r in reports})
    md_parts = []
    for eps in eps_values:
        rows = [["-"] + [_fmt(next((r.clean_error for r in reports if r.dataset == d), math.nan)) for d in datasets]]
        for m in models:
            cells = []
            for d in datasets:
                r = by_key.get((m, d))
                cells.append(_fmt(r.asr.get(eps, math.nan)) if r is not None else MISSING)
            rows.append([m] + cells)
        md_parts.append(f"ASR (eps = {eps:g})\n\n" + _markdown(["Attack \\ Dataset", *datasets], rows))
    header = ["dataset", "model", "eps", "asr", "asr_valid", "violation_rate", "clean_error", "n"]
    csv_rows = []
    for r in sorted(reports, key=lambda r: (r.dataset, models.index(r.model))):
        for eps in r.eps_grid:
            csv_rows.append([r.dataset, r.model, repr(eps), _csv_num(r.asr[eps]), _csv_num(r.asr_valid[eps]), _csv_num(r.violation_rate), _csv_num(r.clean_error), str(r.n)])
    return "\n".join(md_parts), _csv(header, csv_rows)


def render_boundary(reports: Sequence[BoundaryReport]) -> tuple[str, str]:
    datasets = sorted({r.dataset for r in reports})
    p_values = sorted({p for r in reports for p in r.p_grid})
    by_key = {(r.model, r.dataset): r for r in reports}
    models = _model_rows({r.model for r in reports if r.model != "Real"})
    if any(r.model == "Real" for r in reports):
        models.append("Real")
    header = ["p"] + [f"{d} {100 * p:g}%" for d in datasets for p in p_values]
    rows = []
    for m in models:
        cells = []
        for d in datasets:
            r = by_key.get((m, d))
            cells += [_fmt(r.occupancy(p), 1) if r is not None else MISSING for p in p_values]
        rows.append([m] + cells)
    csv_rows = []
    for r in sorted(reports, key=lambda r: (r.dataset, models.index(r.model))):
        for cid, p, w, occ in r.rows:
            csv_rows.append([r.dataset, r.model, cid, repr(p), _csv_num(w), _csv_num(occ)])
    return _markdown(header, rows), _csv(["dataset", "model", "constraint", "p", "width", "occupancy_pct"], csv_rows)


def render_runtime(reports: Sequence[RuntimeReport]) -> tuple[str, str]:
    datasets = sorted({r.dataset for r in reports})
    by_key = {(r.model, r.dataset, r.kind): r for r in reports}
    models = _model_rows({r.model for r in reports})
    header = ["Model"] + [f"Train {d} (min)" for d in datasets] + [f"Sample {d} (s)" for d in datasets]
    rows = []
    for m in models:
        train = [by_key.get((m, d, "train")) for d in datasets]
        sample = [by_key.get((m, d, "sample")) for d in datasets]
        rows.append(
            [m]
            + [_fmt(r.median / 60.0) if r is not None else MISSING for r in train]
            + [_fmt(r.median) if r is not None else MISSING for r in sample]
        )
    csv_rows = []
    for r in sorted(reports, key=lambda r: (r.dataset, models.index(r.model), r.kind)):
        csv_rows.append([r.dataset, r.model, r.kind, str(len(r.samples)), _csv_num(r.median), _csv_num(r.minimum), _csv_num(r.maximum)])
    return _markdown(header, rows), _csv(["dataset", "model", "kind", "repeats", "median_s", "min_s", "max_s"], csv_rows)


def render_report(attack: Sequence[AttackReport] = (), boundary: Sequence[BoundaryReport] = (), runtime: Sequence[RuntimeReport] = ()) -> dict[str, str]:
    """File-suffix -> text for every non-empty report family."""
    if not (attack or boundary or runtime):
        raise ValueError("nothing to render")
    out: dict[str, str] = {}
    if attack:
        out["asr.md"], out["asr.csv"] = render_asr(attack)
    if boundary:
        out["boundary.md"], out["boundary.csv"] = render_boundary(boundary)
    if runtime:
        out["runtime.md"], out["runtime.csv"] = render_runtime(runtime)
    return out
