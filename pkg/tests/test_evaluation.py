import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabadv.constraints import Feature, FeatureSchema, parse_constraints
from tabadv.evaluation import (
    MISSING,
    AttackReport,
    attack_report,
    asr,
    asr_valid,
    band_width,
    boundary_occupancy,
    boundary_report,
    render_asr,
    render_boundary,
    render_report,
    render_runtime,
    runtime_bench,
)
from tabadv.models import AttackExample

S = FeatureSchema(tuple(Feature(n, "continuous", 0.0, 1.0) for n in ("x1", "x2", "x3")))
CS = parse_constraints("x2 - x1 >= 0", S)
EPS = 0.5


def ex(delta, label, before, after, ok=True):
    adv = {"x1": 0.2, "x2": 0.6 if ok else 0.1, "x3": 0.0}
    return AttackExample({"x1": 0.2, "x2": 0.6, "x3": 0.0}, adv, np.asarray(delta, float), label, before, after)


def hand_fixture():
    return [
        ex([0.1, 0.0], 0, 0, 1),
        ex([0.0, 0.2], 1, 1, 0),
        ex([0.1, 0.1], 0, 0, 1, ok=False),  # flips but violates x2 >= x1
        ex([2 * EPS, 0.0], 1, 1, 0),  # flips outside the budget
    ]


def test_hand_fixture_asr():
    assert asr(hand_fixture(), CS, EPS) == 0.5


def test_no_flips_is_zero():
    same = [ex([0.0, 0.0], y, y, y) for y in (0, 1, 1, 0)]
    assert asr(same, CS, EPS) == 0.0


def test_budget_is_strict():
    assert asr([ex([EPS, 0.0], 0, 0, 1)], CS, EPS) == 0.0
    assert asr([ex([EPS - 1e-12, 0.0], 0, 0, 1)], CS, EPS) == 1.0


def test_asr_valid_restricts_to_correct_originals():
    items = hand_fixture() + [ex([0.1, 0.0], 0, 1, 1)]  # misclassified original, still "flipped"
    assert asr(items, CS, EPS) == pytest.approx(3 / 5)
    assert asr_valid(items, CS, EPS) == 0.5
    assert math.isnan(asr_valid([ex([0.0, 0.0], 0, 1, 1)], CS, EPS))


def test_asr_errors():
    with pytest.raises(ValueError):
        asr([], CS, EPS)
    with pytest.raises(ValueError):
        asr(hand_fixture(), CS, 0.0)


@st.composite
def attack_sets(draw):
    n = draw(st.integers(1, 40))
    out = []
    for _ in range(n):
        label = draw(st.integers(0, 1))
        out.append(ex([draw(st.floats(0, 1)), 0.0], label, draw(st.integers(0, 1)), draw(st.integers(0, 1)), draw(st.booleans())))
    return out


@settings(max_examples=100, deadline=None)
@given(attack_sets(), st.lists(st.floats(0.01, 2.0), min_size=2, max_size=5))
def test_asr_monotone_in_eps(items, grid):
    rates = [asr(items, CS, e) for e in sorted(set(grid))]
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    rep = attack_report(items, CS, "AdvWGAN", "toy", 0.1, grid)
    assert list(rep.asr.values()) == rates


# --- band ------------------------------------------------------------------------------

def test_band_width_examples():
    assert band_width(3, 4, 1) == 5.0
    assert band_width(3, 4, 0.01) == pytest.approx(0.05, rel=1e-12)
    assert band_width(0, 7.5, 0.2) == pytest.approx(1.5, rel=1e-12)
    with pytest.raises(ValueError):
        band_width(3, 4, 0)


@settings(max_examples=100)
@given(st.floats(0, 100), st.floats(0, 100), st.floats(1e-3, 1))
def test_band_width_symmetric_and_linear(r1, r2, p):
    assert band_width(r1, r2, p) == band_width(r2, r1, p)
    assert band_width(r1, r2, p) == pytest.approx(p * band_width(r1, r2, 1.0), rel=1e-12, abs=1e-300)


RANGES = {"x1": (0.0, 1.0), "x2": (0.0, 1.0), "x3": (0.0, 1.0)}


def test_points_on_line_all_inside():
    t = np.linspace(0, 1, 50)
    assert boundary_occupancy({"x1": t, "x2": t}, CS.linear[0], RANGES, 0.01) == 100.0


def test_occupancy_arity():
    three = parse_constraints("x1 + x2 - x3 >= 0", S).linear[0]
    with pytest.raises(ValueError, match="two"):
        boundary_occupancy({"x1": [0.0], "x2": [0.0], "x3": [0.0]}, three, RANGES, 0.1)
    with pytest.raises(ValueError):
        boundary_occupancy({"x1": [], "x2": []}, CS.linear[0], RANGES, 0.1)


def test_strip_monte_carlo_against_closed_form():
    # half width 0.1 around x2 = x1: |x2 - x1| <= a with a = 0.1 * sqrt(2)
    p = 0.2 / math.sqrt(2)
    a = 0.1 * math.sqrt(2)
    closed = 100.0 * (1.0 - (1.0 - a) ** 2)
    pts = np.random.default_rng(0).random((100_000, 2))
    mc = boundary_occupancy({"x1": pts[:, 0], "x2": pts[:, 1]}, CS.linear[0], RANGES, p)
    assert abs(mc - closed) <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.floats(0.001, 0.5), st.floats(0.001, 0.5))
def test_occupancy_monotone_in_p(seed, p, q):
    pts = np.random.default_rng(seed).random((200, 2))
    rec = {"x1": pts[:, 0], "x2": pts[:, 1]}
    lo, hi = sorted((p, q))
    assert boundary_occupancy(rec, CS.linear[0], RANGES, lo) <= boundary_occupancy(rec, CS.linear[0], RANGES, hi)


def test_boundary_report_skips_wide_constraints():
    cs = parse_constraints("x2 - x1 >= 0\nx1 + x2 - x3 >= 0\nx3 >= 0.5", S)
    pts = np.random.default_rng(1).random((100, 3))
    rep = boundary_report(dict(zip(("x1", "x2", "x3"), pts.T)), cs, RANGES, "AdvWGAN", "toy")
    assert {cid for cid, *_ in rep.rows} == {"c1"}
    assert len(rep.rows) == 3


# --- runtime ---------------------------------------------------------------------------

def test_noop_is_fast_and_counts_repeats():
    rep = runtime_bench(lambda: None, repeats=5)
    assert len(rep.samples) == 5
    assert rep.median < 1e-3


def test_runtime_uses_clock_and_propagates_errors():
    ticks = iter([0.0, 1.0, 1.0, 4.0, 4.0, 6.0])
    rep = runtime_bench(lambda: None, repeats=3, clock=lambda: next(ticks))
    assert rep.samples == [1.0, 3.0, 2.0]
    assert (rep.median, rep.minimum, rep.maximum) == (2.0, 1.0, 3.0)

    def boom():
        raise RuntimeError("task failed")

    with pytest.raises(RuntimeError):
        runtime_bench(boom)
    with pytest.raises(ValueError):
        runtime_bench(lambda: None, repeats=0)


# --- rendering ------------------------------------------------------------------------

def report(model, dataset, rates, clean=0.05):
    grid = tuple(sorted(rates))
    zeros = np.zeros(1)
    return AttackReport(model, dataset, 10, clean, grid, dict(rates), dict(rates), 0.0, zeros, zeros, zeros)


def test_asr_table_row_scheme():
    md, csv_text = render_asr([report("C-AdvWGAN", "toy", {0.5: 0.3}), report("AdvWGAN", "toy", {0.5: 0.1})])
    rows = [line for line in md.splitlines() if line.startswith("| ")]
    assert rows[1].startswith("| - | 0.05")
    assert rows[2].startswith("| AdvWGAN | 0.10")
    assert rows[3].startswith("| C-AdvWGAN | 0.30")
    assert csv_text.splitlines()[0] == "dataset,model,eps,asr,asr_valid,violation_rate,clean_error,n"


def test_missing_cells_use_dash():
    md, _ = render_asr([report("AdvWGAN", "toy", {0.5: 0.1}), report("P-AdvTVAE", "gauss2d", {0.5: 0.2})])
    assert MISSING in md
    assert "| AdvWGAN | n/a | 0.10 |" in md


def test_boundary_and_runtime_tables():
    rec = {"x1": np.array([0.1, 0.5]), "x2": np.array([0.1, 0.9])}
    reps = [boundary_report(rec, CS, RANGES, m, "toy") for m in ("Real", "C-AdvWGAN")]
    md, csv_text = render_boundary(reps)
    assert md.strip().splitlines()[-1].startswith("| Real |")
    assert len(csv_text.splitlines()) == 1 + 2 * 3
    rt = [runtime_bench(lambda: None, 2, "AdvWGAN", "toy", kind) for kind in ("train", "sample")]
    md, csv_text = render_runtime(rt)
    assert "Train toy (min)" in md and "Sample toy (s)" in md
    out = render_report(runtime=rt[:1])
    assert set(out) == {"runtime.md", "runtime.csv"}
    with pytest.raises(ValueError):
        render_report()
