"""Seeded generators for the bundled toy datasets.

``gauss2d``: two features, two Gaussian classes, rows with ``x2 < x1`` rejected.
``toy``: five continuous features with chained linear structure plus an
immutable categorical, class-dependent Gaussian location. Rows are filtered
so they satisfy every bundled feasible constraint set.

Run ``python3 -m tabadv.synthetic [outdir]`` to regenerate the fixture files.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .constraints import Feature, FeatureSchema, load_constraints, save_schema, violation_mask
from .data import Dataset, save_csv

FIXTURES = Path(__file__).parent / "fixtures"


def gauss2d_schema() -> FeatureSchema:
    return FeatureSchema((Feature("x1", "continuous", -3.0, 3.0), Feature("x2", "continuous", -1.0, 5.0)))


def toy_schema() -> FeatureSchema:
    return FeatureSchema(
        (
            Feature("x1", "continuous", -4.0, 6.0),
            Feature("x2", "continuous", -4.0, 10.0),
            Feature("x3", "continuous", -4.0, 12.0),
            Feature("x4", "continuous", 0.0, 10.0),
            Feature("x5", "continuous", 0.0, 14.0),
            Feature("segment", "categorical", categories=("a", "b", "c"), mutable=False),
        )
    )


def make_gauss2d(n: int = 1000, seed: int = 7) -> Dataset:
    rng = np.random.default_rng(seed)
    schema = gauss2d_schema()
    means = np.array([[-1.0, 1.0], [1.0, 3.0]])
    xs, ys = [], []
    for label in (0, 1):
        need = n // 2 if label == 0 else n - n // 2
        got = 0
        while got < need:
            pts = rng.normal(means[label], 0.5, size=(need, 2))
            inside = (pts[:, 1] >= pts[:, 0]) & (pts[:, 0] >= -3) & (pts[:, 0] <= 3) & (pts[:, 1] >= -1) & (pts[:, 1] <= 5)
            pts = pts[inside][: need - got]
            xs.append(pts)
            ys.append(np.full(len(pts), label))
            got += len(pts)
    x = np.round(np.concatenate(xs), 6)
    y = np.concatenate(ys).astype(np.int64)
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    return Dataset(schema, {"x1": x[:, 0], "x2": x[:, 1]}, y, ("0", "1"), "gauss2d")


def _toy_rows(rng: np.random.Generator, label: int, m: int) -> dict[str, np.ndarray]:
    loc = (0.0, 2.5)[label]
    x1 = rng.normal(loc, 1.0, m)
    x2 = x1 + rng.uniform(0.0, 2.0 + 2.0 * label, m)
    x3 = x2 + rng.uniform(0.0, 2.0, m)
    x4 = rng.uniform(0.0, 10.0, m)
    x5 = x4 * rng.uniform(0.6 + 0.4 * label, 1.4, m)
    probs = ((0.5, 0.3, 0.2), (0.2, 0.3, 0.5))[label]
    segment = rng.choice(np.array(["a", "b", "c"], dtype=object), size=m, p=probs)
    return {"x1": x1, "x2": x2, "x3": x3, "x4": x4, "x5": x5, "segment": segment}


def make_toy(n: int = 1000, seed: int = 11, constraint_files=("linear.txt", "mixed.txt")) -> Dataset:
    rng = np.random.default_rng(seed)
    schema = toy_schema()
    csets = [load_constraints(FIXTURES / name, schema) for name in constraint_files]
    parts: list[dict[str, np.ndarray]] = []
    labels: list[np.ndarray] = []
    for label, need in ((0, int(round(0.6 * n))), (1, n - int(round(0.6 * n)))):
        got = 0
        while got < need:
            cols = _toy_rows(rng, label, need)
            for name in schema.continuous:
                cols[name] = np.round(cols[name], 6)
            keep = np.ones(need, dtype=bool)
            for f in schema.features:
                if f.is_continuous:
                    keep &= (cols[f.name] >= f.lower) & (cols[f.name] <= f.upper)
            for cset in csets:
                keep &= ~violation_mask(cset, cols, tol=0.0)
            idx = np.flatnonzero(keep)[: need - got]
            parts.append({k: v[idx] for k, v in cols.items()})
            labels.append(np.full(len(idx), label, dtype=np.int64))
            got += len(idx)
    columns = {k: np.concatenate([p[k] for p in parts]) for k in schema.names}
    y = np.concatenate(labels)
    order = rng.permutation(len(y))
    columns = {k: v[order] for k, v in columns.items()}
    return Dataset(schema, columns, y[order], ("0", "1"), "toy")


def write_fixtures(outdir: Path = FIXTURES) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_schema(gauss2d_schema(), outdir / "gauss2d_schema.json")
    save_csv(make_gauss2d(), outdir / "gauss2d.csv")
    save_schema(toy_schema(), outdir / "toy_schema.json")
    save_csv(make_toy(), outdir / "toy.csv")


if __name__ == "__main__":
    write_fixtures(Path(sys.argv[1]) if len(sys.argv) > 1 else FIXTURES)
