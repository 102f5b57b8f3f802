"""Ordering-directed constraint repair.

Each canonical constraint ``sum_k w_k x_k + b >= 0`` is attached to the feature
``j`` that comes last in the repair ordering and becomes a bound on it::

    x_j >= (-b - sum_{k != j} w_k x_k) / w_j     if w_j > 0
    x_j <= (-b - sum_{k != j} w_k x_k) / w_j     if w_j < 0

Repair walks the ordering once and clamps every feature into the interval of
its bounds evaluated on the already-repaired prefix. A bound only moves a value
when its constraint is actually violated, so feasible records pass through
bitwise unchanged. Violations within floating-point noise of zero (relative
``ACTIVE_TOL``) do not count, which keeps repair idempotent when a value was
clamped onto a bound computed along a different arithmetic path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .constraints import ConstraintSet, LinearConstraint, render_linear, satisfies_all

INFEASIBLE_TOL = 1e-9
SATISFIED_TOL = 1e-6
ACTIVE_TOL = 1e-12


class CompileError(ValueError):
    pass


class OrderingError(ValueError):
    pass


@dataclass(frozen=True)
class RepairOrdering:
    order: tuple[str, ...]
    seed: int | None = None

    def position(self, name: str) -> int:
        return self.order.index(name)


@dataclass(frozen=True)
class Bound:
    feature: str
    kind: str  # "lower" | "upper"
    terms: tuple[tuple[str, float], ...]
    const: float
    gate: tuple[LinearConstraint, ...]
    source: str
    constraint: LinearConstraint  # canonical form with the strictness margin folded into the bias

    def expr_text(self) -> str:
        parts = [f"{w:+.6g}*{n}" for n, w in self.terms]
        parts.append(f"{self.const:+.6g}")
        return " ".join(parts)


@dataclass(frozen=True)
class RepairPlan:
    ordering: RepairOrdering
    assignments: tuple[tuple[str, tuple[Bound, ...]], ...]
    columns: tuple[str, ...]
    constraints: ConstraintSet
    margin: float = 0.0

    def bounds_for(self, name: str) -> tuple[Bound, ...]:
        return dict(self.assignments).get(name, ())

    def dump(self) -> str:
        """Stable human-readable listing of the per-feature bounds."""
        lines = ["ordering: " + ", ".join(self.ordering.order)]
        for name, bounds in self.assignments:
            lines.append(f"{name}:")
            if not bounds:
                lines.append("  (free)")
            for b in bounds:
                text = f"  {b.kind:<5} {b.expr_text()}  [{b.source}]"
                if b.gate:
                    text += "  if " + " and ".join(render_linear(g) for g in b.gate)
                lines.append(text)
        return "\n".join(lines) + "\n"


@dataclass
class RepairOutcome:
    repaired: dict[str, float]
    changed: bool
    deltas: dict[str, float]
    infeasible: tuple[str, ...] = ()


def _with_margin(c: LinearConstraint, margin: float) -> LinearConstraint:
    if c.strict and margin:
        return LinearConstraint(c.terms, c.bias - margin, False, id=c.id, line=c.line)
    return c


def _make_bound(c: LinearConstraint, ordering: RepairOrdering, gate: tuple, source: str, margin: float) -> Bound:
    c = _with_margin(c, margin)
    target = max(c.features, key=ordering.position)
    w_j = c.coefficients[target]
    terms = tuple((n, -w / w_j) for n, w in c.terms if n != target)
    const = -c.bias / w_j
    kind = "lower" if w_j > 0 else "upper"
    return Bound(target, kind, terms, const + 0.0, gate, source, c)


def compile_plan(cset: ConstraintSet, ordering: RepairOrdering, margin: float = 0.0, columns: Sequence[str] | None = None) -> RepairPlan:
    """Attach every constraint to its ordering-last feature.

    ``columns`` fixes the tensor layout used by :func:`repair_node`; it defaults
    to all continuous schema features in schema order.
    """
    order = tuple(ordering.order)
    if len(set(order)) != len(order):
        raise CompileError("ordering lists a feature twice")
    missing = [n for n in cset.features if n not in order]
    if missing:
        raise CompileError(f"ordering misses constrained feature(s): {', '.join(missing)}")
    extra = [n for n in order if n not in cset.features]
    if extra:
        raise CompileError(f"ordering names unconstrained feature(s): {', '.join(extra)}")

    per_feature: dict[str, list[Bound]] = {n: [] for n in order}
    for c in cset.all():
        if isinstance(c, LinearConstraint):
            b = _make_bound(c, ordering, (), c.id, margin)
            per_feature[b.feature].append(b)
            continue
        ante_pos = max(ordering.position(n) for a in c.antecedent for n in a.features)
        gate = tuple(_with_margin(a, 0.0) for a in c.antecedent)
        for k in c.consequent:
            b = _make_bound(k, ordering, gate, c.id, margin)
            if ordering.position(b.feature) <= ante_pos:
                raise CompileError(
                    f"conditional {c.id}: antecedent feature {order[ante_pos]!r} does not precede "
                    f"consequent feature {b.feature!r} in the ordering"
                )
            per_feature[b.feature].append(b)

    cols = tuple(columns) if columns is not None else tuple(cset.schema.continuous)
    missing_cols = [n for n in order if n not in cols]
    if missing_cols:
        raise CompileError(f"column layout misses constrained feature(s): {', '.join(missing_cols)}")
    assignments = tuple((n, tuple(per_feature[n])) for n in order)
    return RepairPlan(RepairOrdering(order, ordering.seed), assignments, cols, cset, margin)


def random_ordering(cset: ConstraintSet, seed: int, max_tries: int = 1000, margin: float = 0.0) -> RepairOrdering:
    """Seeded random permutation of the constrained features that compiles."""
    feats = cset.features
    if not feats:
        raise OrderingError("constraint set references no features")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        perm = tuple(feats[i] for i in rng.permutation(len(feats)))
        candidate = RepairOrdering(perm, seed)
        try:
            compile_plan(cset, candidate, margin)
        except CompileError:
            continue
        return candidate
    raise OrderingError(f"no valid ordering found in {max_tries} tries (cyclic conditional dependencies?)")


# --- record path -------------------------------------------------------------

def _linear_slack(c: LinearConstraint, values: Mapping[str, float]) -> float:
    total = 0.0
    for name, w in c.terms:
        total += w * values[name]
    return total + c.bias


def _violated(c: LinearConstraint, values: Mapping[str, float]) -> bool:
    scale = abs(c.bias)
    for name, w in c.terms:
        scale += abs(w * values[name])
    return _linear_slack(c, values) < -ACTIVE_TOL * (1.0 + scale)


def _gate_open(gate, values) -> bool:
    for a in gate:
        s = _linear_slack(a, values)
        if not (s > 0 if a.strict else s >= 0):
            return False
    return True


def _bound_value(b: Bound, values: Mapping[str, float]) -> float:
    total = b.const
    for name, w in b.terms:
        total += w * values[name]
    return total


def repair(plan: RepairPlan, record: Mapping[str, float]) -> RepairOutcome:
    values = dict(record)
    conflicts: list[str] = []
    for name, bounds in plan.assignments:
        x = values[name]
        lo = hi = None
        lo_all, hi_all = -math.inf, math.inf
        lo_src = hi_src = None
        for b in bounds:
            if b.gate and not _gate_open(b.gate, values):
                continue
            v = _bound_value(b, values)
            active = _violated(b.constraint, values)
            if b.kind == "lower":
                if v > lo_all:
                    lo_all, lo_src = v, b.source
                if active:
                    lo = v if lo is None else max(lo, v)
            else:
                if v < hi_all:
                    hi_all, hi_src = v, b.source
                if active:
                    hi = v if hi is None else min(hi, v)
        if lo_all > hi_all + INFEASIBLE_TOL:
            values[name] = lo_all
            conflicts.extend(s for s in (lo_src, hi_src) if s not in conflicts)
            continue
        if lo is not None:
            x = max(lo, x)
        if hi is not None:
            x = min(hi, x)
        values[name] = x
    deltas = {n: values[n] - record[n] for n in plan.ordering.order if values[n] != record[n]}
    return RepairOutcome(values, bool(deltas), deltas, tuple(conflicts))


# --- tensor path ---------------------------------------------------------------

def _np_slack(c: LinearConstraint, cols: dict[str, Tensor]) -> np.ndarray:
    total = 0.0
    for name, w in c.terms:
        total = total + w * cols[name].data
    return total + c.bias


def _np_violated(c: LinearConstraint, cols: dict[str, Tensor]) -> np.ndarray:
    scale = abs(c.bias)
    for name, w in c.terms:
        scale = scale + np.abs(w * cols[name].data)
    return _np_slack(c, cols) < -ACTIVE_TOL * (1.0 + scale)


def _np_gate(gate, cols, n) -> np.ndarray:
    mask = np.ones((n, 1), dtype=bool)
    for a in gate:
        s = _np_slack(a, cols)
        mask &= (s > 0) if a.strict else (s >= 0)
    return mask


def _tensor_bound(b: Bound, cols: dict[str, Tensor], n: int) -> Tensor:
    total = Tensor(np.full((n, 1), b.const))
    for name, w in b.terms:
        total = ad.add(total, ad.mul(w, cols[name]))
    return total


def _fold(fn, items):
    out = items[0]
    for t in items[1:]:
        out = fn(out, t)
    return out


def _repair_tensor(plan: RepairPlan, batch: Tensor) -> tuple[Tensor, np.ndarray]:
    if batch.ndim != 2 or batch.shape[1] != len(plan.columns):
        raise ValueError(f"batch shape {batch.shape} does not match plan layout of {len(plan.columns)} columns")
    n = batch.shape[0]
    cols = {name: ad.take_columns(batch, [i]) for i, name in enumerate(plan.columns)}
    infeasible_rows = np.zeros(n, dtype=bool)
    neg_inf = np.full((n, 1), -math.inf)
    pos_inf = np.full((n, 1), math.inf)
    for name, bounds in plan.assignments:
        if not bounds:
            continue
        x = cols[name]
        lows, highs, lows_all, highs_all = [], [], [], []
        for b in bounds:
            gate = _np_gate(b.gate, cols, n) if b.gate else np.ones((n, 1), dtype=bool)
            active = gate & _np_violated(b.constraint, cols)
            v = _tensor_bound(b, cols, n)
            if b.kind == "lower":
                lows.append(ad.where(active, v, neg_inf))
                lows_all.append(ad.where(gate, v, neg_inf))
            else:
                highs.append(ad.where(active, v, pos_inf))
                highs_all.append(ad.where(gate, v, pos_inf))
        out = x
        if lows:
            out = ad.maximum(_fold(ad.maximum, lows), out)
        if highs:
            out = ad.minimum(_fold(ad.minimum, highs), out)
        if lows and highs:
            lo_all = _fold(ad.maximum, lows_all)
            hi_all = _fold(ad.minimum, highs_all)
            bad = lo_all.data > hi_all.data + INFEASIBLE_TOL
            if bad.any():
                out = ad.where(bad, lo_all, out)
                infeasible_rows |= bad[:, 0]
        cols[name] = out
    return ad.concat([cols[name] for name in plan.columns], axis=1), infeasible_rows


def repair_node(plan: RepairPlan, batch) -> Tensor:
    """Differentiable batched repair over the plan's column layout.

    Gradients flow to the selected bound expression for clamped entries and to
    the input elsewhere; gates are hard and carry no gradient.
    """
    out, _ = _repair_tensor(plan, ad.as_tensor(batch))
    return out


def repair_batch(plan: RepairPlan, array: np.ndarray) -> tuple[np.ndarray, dict[int, tuple[str, ...]]]:
    """Repair a plain array; returns the repaired copy and conflicts per infeasible row."""
    out, bad = _repair_tensor(plan, Tensor(np.asarray(array, dtype=np.float64)))
    conflicts = {}
    for i in np.flatnonzero(bad):
        rec = dict(zip(plan.columns, array[i]))
        conflicts[int(i)] = repair(plan, rec).infeasible
    return out.data, conflicts


def violation_rate(cset: ConstraintSet, records: Sequence[Mapping[str, float]], tol: float = SATISFIED_TOL) -> float:
    """Fraction of records violating at least one constraint (slack < -tol)."""
    if len(records) == 0:
        raise ValueError("violation_rate needs at least one record")
    bad = sum(1 for r in records if not satisfies_all(cset, r, tol))
    return bad / len(records)


def columns_to_records(columns: Sequence[str], array: np.ndarray) -> list[dict[str, float]]:
    return [dict(zip(columns, map(float, row))) for row in np.asarray(array)]


__all__ = [
    "Bound",
    "CompileError",
    "OrderingError",
    "RepairOrdering",
    "RepairOutcome",
    "RepairPlan",
    "columns_to_records",
    "compile_plan",
    "random_ordering",
    "repair",
    "repair_batch",
    "repair_node",
    "violation_rate",
]
