"""Command-line entry point: ``tabadv <verb> [options]``.

Exit codes: 0 success, 2 input or validation error, 3 infeasible repair,
4 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .constraints import ConstraintError, SchemaError, constraint_stats, load_constraints, load_schema, violation_mask
from .data import DataError, Dataset, SplitSpec, load_csv, split
from .evaluation import (
    DEFAULT_EPS_GRID,
    DEFAULT_P_GRID,
    AttackReport,
    BoundaryReport,
    RuntimeReport,
    attack_report,
    boundary_report,
    render_report,
    runtime_bench,
)
from .models import (
    AdvConfig,
    CheckpointError,
    TargetArch,
    checkpoint_meta,
    generate,
    load_generator,
    load_target,
    save_generator,
    save_target,
    train_advdgm,
    train_target,
)
from .repair import CompileError, OrderingError, compile_plan, random_ordering, repair_batch, violation_rate

log = logging.getLogger("tabadv")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_MISSING = 0, 2, 3, 4
OUTPUT_ENV = "TABADV_OUTPUT_ROOT"
FIXTURES = Path(__file__).parent / "fixtures"
GRID_KEYS = ("backbone", "mode", "alpha", "beta", "lr")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


class MissingArtifact(CliError):
    def __init__(self, path: Path, hint: str):
        super().__init__(f"missing artifact {path} ({hint})", EXIT_MISSING)


# --- run configuration -----------------------------------------------------------------

def resolve_path(text: str, base: Path) -> Path:
    """``fixture:NAME`` points into the bundled fixtures; relative paths are taken from ``base``."""
    if text.startswith("fixture:"):
        return FIXTURES / text[len("fixture:") :]
    p = Path(text)
    return p if p.is_absolute() else base / p


def _listify(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunConfig:
    raw: dict
    base: Path
    data_csv: Path
    schema_path: Path
    label: str
    name: str
    constraints_path: Path
    split: SplitSpec
    target: TargetArch
    blocks: list[tuple[dict, dict]]  # (grid lists, fixed fields) per attack block
    eps_grid: tuple[float, ...]
    p_grid: tuple[float, ...]
    ordering_seed: int
    seed: int
    output: Path
    runtime_repeats: int

    @classmethod
    def from_dict(cls, raw: dict, base: Path, env_output: str | None = None) -> "RunConfig":
        raw = copy.deepcopy(raw)
        try:
            ds = raw["dataset"]
            data_csv = resolve_path(ds["csv"], base)
            schema_path = resolve_path(ds["schema"], base)
            constraints_path = resolve_path(raw["constraints"], base)
        except (KeyError, TypeError) as exc:
            raise CliError(f"run config misses field {exc}") from None
        for p in (data_csv, schema_path, constraints_path):
            if not p.exists():
                raise CliError(f"run config references missing file {p}")
        sp = raw.get("split", {})
        split_spec = SplitSpec(tuple(sp.get("fractions", (0.8, 0.1, 0.1))), bool(sp.get("stratify", True)), int(sp.get("seed", 0)))
        tgt = dict(raw.get("target", {}))
        if "hidden" in tgt:
            tgt["hidden"] = tuple(tgt["hidden"])
        target = TargetArch(**tgt)
        blocks = []
        for att in _listify(raw.get("attack", {})):
            if not isinstance(att, dict):
                raise CliError("each attack block must be a mapping")
            att = dict(att)
            grid = {k: _listify(att.pop(k)) for k in GRID_KEYS if k in att}
            grid.setdefault("backbone", ["wgan"])
            grid.setdefault("mode", ["none", "P", "C"])
            for k, v in grid.items():
                if not v:
                    raise CliError(f"attack grid '{k}' is empty")
            blocks.append((grid, att))
        if not blocks:
            raise CliError("attack grid is empty")
        eps_grid = tuple(float(e) for e in raw.get("eps_grid", DEFAULT_EPS_GRID))
        p_grid = tuple(float(p) for p in raw.get("p_grid", DEFAULT_P_GRID))
        if not eps_grid or not p_grid:
            raise CliError("eps_grid and p_grid must be non-empty")
        output = Path(env_output) if env_output else resolve_path(str(raw.get("output", "runs")), Path.cwd())
        cfg = cls(
            raw, base, data_csv, schema_path, str(ds.get("label", "label")), str(ds.get("name", data_csv.stem)),
            constraints_path, split_spec, target, blocks, eps_grid, p_grid,
            int(raw.get("ordering_seed", 0)), int(raw.get("seed", 0)), output, int(raw.get("runtime_repeats", 3)),
        )
        cfg.grid_points()  # validates the grid
        return cfg

    def config_hash(self) -> str:
        body = {k: v for k, v in self.raw.items() if k != "output"}
        body["_files"] = [_file_digest(p) for p in (self.data_csv, self.schema_path, self.constraints_path)]
        return hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()[:12]

    @property
    def run_id(self) -> str:
        return f"{self.name}-{self.config_hash()}-s{self.seed}"

    @property
    def run_dir(self) -> Path:
        return self.output / self.run_id

    def grid_points(self) -> list[AdvConfig]:
        points: list[AdvConfig] = []
        keys = list(GRID_KEYS)
        for grid, fixed in self.blocks:
            values = [grid.get(k, [getattr(AdvConfig, k)]) for k in keys]
            for combo in product(*values):
                fields = dict(fixed)
                fields.update(zip(keys, combo))
                fields.setdefault("ordering_seed", self.ordering_seed)
                fields.setdefault("seed", self.seed)
                try:
                    cfg = AdvConfig(**fields)
                except TypeError as exc:
                    raise CliError(f"bad attack configuration: {exc}") from None
                if any(point_name(cfg) == point_name(p) for p in points):
                    raise CliError(f"attack grid lists {point_name(cfg)} twice")
                points.append(cfg)
        return points


def point_name(cfg: AdvConfig) -> str:
    return f"{cfg.label}-a{cfg.alpha:g}-b{cfg.beta:g}-lr{cfg.lr:g}"


def load_run_config(path: str, overrides: argparse.Namespace) -> RunConfig:
    cfg_path = resolve_path(path, Path.cwd())
    if not cfg_path.exists():
        raise CliError(f"run config {cfg_path} not found")
    try:
        raw = yaml.safe_load(cfg_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise CliError(f"run config {cfg_path} does not parse: {exc}") from None
    if not isinstance(raw, dict):
        raise CliError(f"run config {cfg_path} must be a mapping")
    raw.setdefault("attack", {})
    for key in ("seed", "ordering_seed", "output"):
        v = getattr(overrides, key, None)
        if v is not None:
            raw[key] = v
    blocks = [dict(b) if isinstance(b, dict) else b for b in _listify(raw["attack"])]
    for key in ("epochs", "max_step", *GRID_KEYS):
        v = getattr(overrides, key, None)
        if v is not None:
            for b in blocks:
                if isinstance(b, dict):
                    b[key] = v
    raw["attack"] = blocks if isinstance(raw["attack"], list) else blocks[0]
    base = cfg_path.parent
    return RunConfig.from_dict(raw, base, os.environ.get(OUTPUT_ENV))


# --- stages -------------------------------------------------------------------------

@dataclass
class Loaded:
    cfg: RunConfig
    dataset: Dataset
    train: Dataset
    val: Dataset
    test: Dataset
    cset: object


def load_inputs(cfg: RunConfig) -> Loaded:
    schema = load_schema(cfg.schema_path)
    cset = load_constraints(cfg.constraints_path, schema)
    dataset = load_csv(cfg.data_csv, schema, cfg.label, name=cfg.name)
    tr, va, te = split(dataset, cfg.split)
    return Loaded(cfg, dataset, tr, va, te, cset)


def _target_path(cfg: RunConfig) -> Path:
    return cfg.run_dir / "target.json"


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path, hint: str):
    if not path.exists():
        raise MissingArtifact(path, hint)
    return json.loads(path.read_text(encoding="utf-8"))


def _check_hash(path: Path, cfg: RunConfig) -> None:
    meta = checkpoint_meta(path)
    if meta.get("config_hash") != cfg.config_hash():
        raise CliError(f"config hash mismatch: {path} was produced by {meta.get('config_hash')}, request is {cfg.config_hash()}")


def stage_train_target(inp: Loaded) -> Path:
    cfg = inp.cfg
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    target = train_target(inp.train, inp.val, cfg.target, test=inp.test)
    path = _target_path(cfg)
    save_target(target, path, {"config_hash": cfg.config_hash(), "seed": cfg.seed})
    print(f"target: clean error {target.clean_error:.4f} -> {path}")
    return path


def _load_target(inp: Loaded):
    path = _target_path(inp.cfg)
    if not path.exists():
        raise MissingArtifact(path, "run train-target first")
    _check_hash(path, inp.cfg)
    return load_target(path, inp.dataset.schema)


def stage_train_attack(inp: Loaded) -> list[Path]:
    cfg = inp.cfg
    target = _load_target(inp)
    paths = []
    for point in cfg.grid_points():
        holder = {}
        rt = runtime_bench(lambda: holder.setdefault("m", train_advdgm(inp.train, target, inp.cset, point)), 1, point.label, cfg.name, "train")
        path = cfg.run_dir / f"attack-{point_name(point)}.json"
        save_generator(holder["m"], path, {"config_hash": cfg.config_hash(), "seed": cfg.seed})
        _write_json(path.with_suffix(".train_time.json"), {"model": point.label, "samples": rt.samples})
        print(f"{point.label}: trained in {rt.median:.2f}s -> {path}")
        paths.append(path)
    return paths


def _generator_path(cfg: RunConfig, point: AdvConfig) -> Path:
    return cfg.run_dir / f"attack-{point_name(point)}.json"


def stage_attack(inp: Loaded, checkpoint: str | None = None) -> list[Path]:
    cfg = inp.cfg
    target = _load_target(inp)
    if checkpoint is not None:
        pairs = [(Path(checkpoint), None)]
    else:
        pairs = [(_generator_path(cfg, p), p) for p in cfg.grid_points()]
    outs = []
    for path, point in pairs:
        if not path.exists():
            raise MissingArtifact(path, "run train-attack first")
        model = load_generator(path, inp.dataset.schema, inp.cset)
        if point is not None:
            _check_hash(path, cfg)
        examples = generate(model, target, inp.test)
        rt = runtime_bench(lambda: generate(model, target, inp.test), cfg.runtime_repeats, model.config.label, cfg.name, "sample")
        stem = path.with_suffix("")
        adv_csv = Path(f"{stem}.adversarial.csv")
        _write_adversarial(adv_csv, examples)
        _write_json(Path(f"{stem}.sample_time.json"), {"model": model.config.label, "samples": rt.samples})
        print(f"{model.config.label}: {len(examples)} adversarial examples -> {adv_csv}")
        outs.append(adv_csv)
    return outs


def _write_adversarial(path: Path, examples) -> None:
    names = examples.originals.schema.names
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "label", "pred_before", "pred_after", "delta_norm"])
        adv = examples.adversarial.columns
        norms = examples.delta_norms
        for i in range(len(examples)):
            cells = [repr(float(adv[n][i])) if examples.originals.schema[n].is_continuous else adv[n][i] for n in names]
            w.writerow(cells + [int(examples.labels[i]), int(examples.pred_before[i]), int(examples.pred_after[i]), repr(float(norms[i]))])


def stage_evaluate(inp: Loaded) -> Path:
    cfg = inp.cfg
    target = _load_target(inp)
    ranges = {n: (float(inp.dataset.columns[n].min()), float(inp.dataset.columns[n].max())) for n in inp.dataset.schema.continuous}
    doc = {"run_id": cfg.run_id, "config_hash": cfg.config_hash(), "dataset": cfg.name, "clean_error": target.clean_error, "attacks": [], "boundary": [], "runtime": []}
    doc["boundary"].append(_boundary_doc(boundary_report(inp.test.columns, inp.cset, ranges, "Real", cfg.name, cfg.p_grid)))
    for point in cfg.grid_points():
        path = _generator_path(cfg, point)
        if not path.exists():
            raise MissingArtifact(path, "run train-attack first")
        _check_hash(path, cfg)
        model = load_generator(path, inp.dataset.schema, inp.cset)
        examples = generate(model, target, inp.test)
        rep = attack_report(examples, inp.cset, point.label, cfg.name, target.clean_error, cfg.eps_grid)
        doc["attacks"].append(
            {"model": rep.model, "n": rep.n, "eps": list(rep.eps_grid), "asr": [rep.asr[e] for e in rep.eps_grid],
             "asr_valid": [rep.asr_valid[e] for e in rep.eps_grid], "violation_rate": rep.violation_rate}
        )
        doc["boundary"].append(_boundary_doc(boundary_report(examples.adversarial.columns, inp.cset, ranges, point.label, cfg.name, cfg.p_grid)))
        for kind in ("train", "sample"):
            tpath = Path(f"{path.with_suffix('')}.{kind}_time.json")
            if tpath.exists():
                doc["runtime"].append({"model": point.label, "kind": kind, "samples": json.loads(tpath.read_text())["samples"]})
        print(f"{point.label}: ASR " + ", ".join(f"{e:g}: {rep.asr[e]:.3f}" for e in rep.eps_grid) + f"; violation rate {rep.violation_rate:.4f}")
    out = cfg.run_dir / "metrics.json"
    _write_json(out, doc)
    return out


def _boundary_doc(rep: BoundaryReport) -> dict:
    return {"model": rep.model, "p": list(rep.p_grid), "rows": [list(r) for r in rep.rows]}


def collect_reports(runs_dir: Path, run_id: str | None = None) -> tuple[list, list, list]:
    attack, boundary, runtime = [], [], []
    metric_files = sorted(runs_dir.glob("*/metrics.json"))
    if run_id is not None:
        metric_files = [p for p in metric_files if p.parent.name == run_id]
    if not metric_files:
        raise MissingArtifact(runs_dir / (run_id or "*") / "metrics.json", "run evaluate first")
    for path in metric_files:
        doc = json.loads(path.read_text(encoding="utf-8"))
        ds = doc["dataset"]
        for a in doc["attacks"]:
            eps = tuple(a["eps"])
            nan = float("nan")
            attack.append(
                AttackReport(a["model"], ds, a["n"], doc["clean_error"], eps, dict(zip(eps, a["asr"])),
                             {e: (nan if v is None else v) for e, v in zip(eps, a["asr_valid"])}, a["violation_rate"],
                             np.zeros(0), np.zeros(0), np.zeros(0))
            )
        for b in doc["boundary"]:
            boundary.append(BoundaryReport(b["model"], ds, tuple(b["p"]), [tuple(r) for r in b["rows"]]))
        for r in doc["runtime"]:
            runtime.append(RuntimeReport(r["model"], ds, r["kind"], r["samples"]))
    return attack, boundary, runtime


def stage_report(runs_dir: Path, prefix: str, run_id: str | None = None) -> list[Path]:
    attack, boundary, runtime = collect_reports(runs_dir, run_id)
    files = render_report(attack, boundary, runtime)
    outs = []
    for suffix, text in sorted(files.items()):
        path = runs_dir / f"{prefix}_{suffix}"
        path.write_text(text, encoding="utf-8")
        outs.append(path)
    print(files.get("asr.md", ""))
    return outs


# --- commands ----------------------------------------------------------------------------

def cmd_constraints_check(args) -> int:
    schema = load_schema(args.schema)
    cset = load_constraints(args.constraints, schema)
    for w in cset.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(constraint_stats(cset).to_markdown(Path(args.constraints).stem), end="")
    return EXIT_OK


def cmd_repair(args) -> int:
    schema = load_schema(args.schema)
    cset = load_constraints(args.constraints, schema)
    plan = compile_plan(cset, random_ordering(cset, args.ordering_seed))
    with open(args.data, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CliError(f"{args.data} is empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise CliError(f"{args.data} has no data rows")
    missing = [c for c in plan.columns if c not in header]
    if missing:
        raise CliError(f"missing column(s) {', '.join(missing)} in {args.data}")
    pos = [header.index(c) for c in plan.columns]
    values = np.empty((len(body), len(pos)))
    for i, row in enumerate(body):
        for j, k in enumerate(pos):
            try:
                values[i, j] = float(row[k])
            except (ValueError, IndexError):
                raise CliError(f"unparseable value in column {plan.columns[j]!r} at row {i + 2}") from None
    before = {c: values[:, j] for j, c in enumerate(plan.columns)}
    repaired, conflicts = repair_batch(plan, values)
    after = {c: repaired[:, j] for j, c in enumerate(plan.columns)}
    pre = float(np.mean(violation_mask(cset, before)))
    post = float(np.mean(violation_mask(cset, after)))
    out_rows = [list(r) for r in body]
    for i in range(len(body)):
        for j, k in enumerate(pos):
            if repaired[i, j] != values[i, j]:
                out_rows[i][k] = repr(float(repaired[i, j]))
    out = Path(args.out)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(out_rows)
    print(f"ordering: {', '.join(plan.ordering.order)}")
    print(f"pre-repair violation rate: {pre:.4f}")
    print(f"post-repair violation rate: {post:.4f}")
    print(f"rows changed: {int(np.any(repaired != values, axis=1).sum())} -> {out}")
    if conflicts:
        for i, ids in sorted(conflicts.items()):
            print(f"row {i + 2}: infeasible, conflicting constraints {', '.join(ids)}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_train_target(args) -> int:
    stage_train_target(load_inputs(load_run_config(args.config, args)))
    return EXIT_OK


def cmd_train_attack(args) -> int:
    stage_train_attack(load_inputs(load_run_config(args.config, args)))
    return EXIT_OK


def cmd_attack(args) -> int:
    stage_attack(load_inputs(load_run_config(args.config, args)), args.checkpoint)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    stage_evaluate(load_inputs(load_run_config(args.config, args)))
    return EXIT_OK


def cmd_report(args) -> int:
    if args.config is None and args.runs is None:
        raise CliError("report needs --config or --runs")
    if args.config is not None:
        cfg = load_run_config(args.config, args)
        stage_report(cfg.output, cfg.run_id, cfg.run_id)
    else:
        stage_report(Path(args.runs), args.prefix or "all")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_run_config(args.config, args)
    inp = load_inputs(cfg)
    stage_train_target(inp)
    stage_train_attack(inp)
    stage_attack(inp)
    stage_evaluate(inp)
    stage_report(cfg.output, cfg.run_id, cfg.run_id)
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser, grid: bool = True) -> None:
    p.add_argument("--config", required=True, help="run configuration (YAML or JSON); 'fixture:NAME' selects a bundled one")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--output", help=f"output root (overrides the config; ${OUTPUT_ENV} overrides both)")
    p.add_argument("--ordering-seed", dest="ordering_seed", type=int, help="seed of the random repair ordering")
    if grid:
        p.add_argument("--backbone", nargs="+", choices=("wgan", "tvae"), help="backbone grid")
        p.add_argument("--mode", nargs="+", choices=("none", "P", "C"), help="constraint mode grid")
        p.add_argument("--alpha", nargs="+", type=float, help="adversarial weight grid")
        p.add_argument("--beta", nargs="+", type=float, help="perturbation weight grid")
        p.add_argument("--lr", nargs="+", type=float, help="learning rate grid")
        p.add_argument("--epochs", type=int, help="training epochs per grid point")
        p.add_argument("--max-step", dest="max_step", type=float, help="bound on the per-feature generator step (scaled space)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabadv", description="Constraint-respecting adversarial example generation for tabular models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constraints-check", help="parse a constraint file and print its statistics")
    p.add_argument("constraints", help="constraint file")
    p.add_argument("schema", help="schema JSON file")
    p.set_defaults(func=cmd_constraints_check)

    p = sub.add_parser("repair", help="repair every row of a CSV file")
    p.add_argument("data", help="input CSV with a header row")
    p.add_argument("constraints", help="constraint file")
    p.add_argument("schema", help="schema JSON file")
    p.add_argument("--ordering-seed", dest="ordering_seed", type=int, default=0, help="seed of the random repair ordering (default 0)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_repair)

    for name, func, text in (
        ("train-target", cmd_train_target, "train the target classifier"),
        ("train-attack", cmd_train_attack, "train every adversarial generator of the grid"),
        ("attack", cmd_attack, "generate adversarial examples from trained generators"),
        ("evaluate", cmd_evaluate, "compute ASR, violation and boundary metrics"),
        ("run", cmd_run, "all stages followed by report"),
    ):
        p = sub.add_parser(name, help=text)
        _add_run_flags(p)
        if name == "attack":
            p.add_argument("--checkpoint", help="attack with this generator checkpoint instead of the grid")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="render ASR, boundary and runtime tables")
    p.add_argument("--config", help="report the run of this configuration")
    p.add_argument("--runs", help="aggregate every run below this directory")
    p.add_argument("--prefix", help="file prefix when aggregating a directory (default 'all')")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--output", help="output root (overrides the config)")
    p.set_defaults(func=cmd_report, ordering_seed=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConstraintError, SchemaError, DataError, CheckpointError, CompileError, OrderingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
