"""Experiment runner: trial matrices from a TOML file, CSV reports, bound calculator.

Reports are data only (no plotting).  Every CSV starts with a
``schema_version`` column; rows come out in matrix order regardless of how
many worker processes ran the trials, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bft import required_window
from .errors import AdvocateError, ConfigError, SafetyViolation
from .metrics import (INF, bound_inclusion_gap, bound_liveness, bound_safety_depth, bound_short_term_cq,
                      compute_report, mean, optimal_chain_quality)
from .sim import SimConfig, Simulation

log = logging.getLogger("advocate")

SCHEMA_VERSION = 1
MATRIX_VARIANTS = ("advocate", "stochastic-cp", "nakamoto-cp", "advocate-hooks", "advocate-pc")
SIM_FIELDS = {f.name for f in fields(SimConfig)}

TRIAL_COLUMNS = ["schema_version", "variant", "beta", "e", "delta_bft", "seed", "run_variant", "c",
                 "fg", "il", "il_infinite", "hw", "cq", "safety_ok", "liveness_bound_ok",
                 "liveness_violations", "max_latency", "confirmed", "generated", "certs"]
CELL_COLUMNS = ["schema_version", "variant", "beta", "e", "delta_bft", "trials", "seeds",
                "fg", "il", "il_infinite_trials", "hw", "cq", "safety_ok"]


@dataclass(frozen=True)
class Cell:
    variant: str
    beta: float
    e: int
    delta_bft: int

    def key(self) -> tuple:
        return (self.variant, self.beta, self.e, self.delta_bft)


@dataclass
class ExperimentMatrix:
    variants: list[str]
    betas: list[float]
    epochs: list[int]
    delta_bfts: list[int]
    seeds: list[int]
    base: dict[str, Any] = field(default_factory=dict)
    out_dir: Path = Path("results")
    workers: int = 1
    hook_t_curve: int = 2

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("every cell needs at least one seed")
        for v in self.variants:
            if v not in MATRIX_VARIANTS:
                raise ConfigError(f"unknown matrix variant {v!r}; choose from {', '.join(MATRIX_VARIANTS)}")
        bad = set(self.base) - SIM_FIELDS
        if bad:
            raise ConfigError(f"unknown simulation keys: {', '.join(sorted(bad))}")
        for key in ("beta", "e", "delta_bft", "seed", "variant"):
            if key in self.base:
                raise ConfigError(f"{key!r} is a matrix axis; set it under [matrix]")

    def cells(self) -> list[Cell]:
        return [Cell(v, b, e, d) for v, b, e, d in
                itertools.product(self.variants, self.betas, self.epochs, self.delta_bfts)]

    def trial_config(self, cell: Cell, seed: int) -> SimConfig:
        return cell_config(cell, seed, self.base)


def cell_config(cell: Cell, seed: int, base: dict) -> SimConfig:
    """Concrete run configuration for one matrix cell.

    A checkpointing delay of ``delta_bft`` rounds is modelled by the committee
    for Advocate and by a delayed single service for the other variants; the
    inclusion window is widened to absorb it.
    """
    cfg = SimConfig(**base).replace(beta=cell.beta, e=cell.e, seed=seed)
    variant = cell.variant
    kw: dict[str, Any] = {"variant": variant}
    if variant == "advocate-hooks" and cfg.hook_t is None:
        kw["hook_t"] = 2
    if variant == "advocate-pc" and cfg.chains == 1:
        kw["chains"] = 3
    if cell.delta_bft > 0:
        c = max(cfg.c, required_window(cfg.c_base, cell.delta_bft, 1.0 / cfg.h))
        kw["c"] = c
        if variant == "advocate":
            kw.update(variant="advocate-bft", delta_bft=cell.delta_bft)
        else:
            kw["service_delay"] = cell.delta_bft
    return cfg.replace(**kw).validate()


# -- config files -----------------------------------------------------------------

def load_matrix(path: Path, seed_override: Optional[int] = None, variants: Optional[Sequence[str]] = None,
                out_dir: Optional[Path] = None, workers: Optional[int] = None) -> ExperimentMatrix:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return matrix_from_dict(doc, seed_override, variants, out_dir, workers)


def matrix_from_dict(doc: dict, seed_override: Optional[int] = None, variants: Optional[Sequence[str]] = None,
                     out_dir: Optional[Path] = None, workers: Optional[int] = None) -> ExperimentMatrix:
    m = dict(doc.get("matrix", {}))
    unknown = set(m) - {"variants", "beta", "e", "delta_bft", "seeds", "trials", "base_seed", "hook_t_curve"}
    if unknown:
        raise ConfigError(f"unknown [matrix] keys: {', '.join(sorted(unknown))}")
    if "seeds" in m:
        seeds = [int(s) for s in m["seeds"]]
    else:
        seeds = list(range(int(m.get("base_seed", 1)), int(m.get("base_seed", 1)) + int(m.get("trials", 5))))
    if seed_override is not None:
        seeds = [seed_override]
    chosen = list(m.get("variants", ["advocate", "stochastic-cp", "nakamoto-cp"]))
    if variants:
        chosen = [v for v in chosen if v in variants]
        if not chosen:
            raise ConfigError("variant filter removed every variant")
    output = doc.get("output", {})
    return ExperimentMatrix(
        variants=chosen,
        betas=[float(b) for b in m.get("beta", [0.5])],
        epochs=[int(e) for e in m.get("e", [5])],
        delta_bfts=[int(d) for d in m.get("delta_bft", [0])],
        seeds=seeds,
        base=dict(doc.get("simulation", {})),
        out_dir=Path(out_dir or output.get("dir", "results")),
        workers=int(workers or output.get("workers", 1)),
        hook_t_curve=int(m.get("hook_t_curve", 2)),
    )


# -- trials -------------------------------------------------------------------------

@dataclass
class TrialResult:
    cell: Cell
    seed: int
    row: dict
    failure: Optional[str] = None
    log_text: Optional[str] = None


def _run(config: SimConfig):
    sim = Simulation(config)
    try:
        return sim.run(), None
    except SafetyViolation as exc:
        sim.log.add("safety-violation", sim.round, message=str(exc))
        return None, (str(exc), sim.log.to_jsonl())


def run_trial(args: tuple[Cell, int, dict]) -> TrialResult:
    """One seed of one cell, with its adversary-free reference run."""
    cell, seed, base = args
    cfg = cell_config(cell, seed, base)
    res, err = _run(cfg)
    if err is not None:
        return TrialResult(cell, seed, {}, err[0], err[1])
    ref, err = _run(cfg.replace(beta=0.0))
    if err is not None:
        return TrialResult(cell, seed, {}, "reference run: " + err[0], err[1])
    rep = compute_report(res.log, ref.log)
    row = {
        "schema_version": SCHEMA_VERSION, "variant": cell.variant, "beta": cell.beta, "e": cell.e,
        "delta_bft": cell.delta_bft, "seed": seed, "run_variant": cfg.variant, "c": cfg.c,
        "fg": rep.fg, "il": rep.il, "il_infinite": rep.il_infinite, "hw": rep.hw, "cq": rep.cq,
        "safety_ok": rep.safety_ok, "liveness_bound_ok": rep.liveness_bound_ok,
        "liveness_violations": rep.liveness_violations, "max_latency": rep.max_latency,
        "confirmed": rep.confirmed, "generated": rep.generated, "certs": len(res.certs) - 1,
    }
    return TrialResult(cell, seed, row)


def execute(jobs: list[tuple[Cell, int, dict]], workers: int) -> list[TrialResult]:
    if workers <= 1 or len(jobs) <= 1:
        return [run_trial(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_trial, jobs))


# -- reports -----------------------------------------------------------------------

def fmt(x: Any) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf"
        return f"{x:.6f}"
    return str(x)


def to_csv(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def cell_rows(matrix: ExperimentMatrix, results: list[TrialResult]) -> list[dict]:
    by_cell: dict[tuple, list[dict]] = {}
    for r in results:
        by_cell.setdefault(r.cell.key(), []).append(r.row)
    out = []
    for cell in matrix.cells():
        rows = by_cell.get(cell.key(), [])
        out.append({
            "schema_version": SCHEMA_VERSION, "variant": cell.variant, "beta": cell.beta, "e": cell.e,
            "delta_bft": cell.delta_bft, "trials": len(rows), "seeds": " ".join(str(r["seed"]) for r in rows),
            "fg": mean(r["fg"] for r in rows),
            "il": mean(r["il"] for r in rows if r["il"] != INF) if any(r["il"] != INF for r in rows) else INF,
            "il_infinite_trials": sum(r["il_infinite"] for r in rows),
            "hw": mean(r["hw"] for r in rows), "cq": mean(r["cq"] for r in rows),
            "safety_ok": all(r["safety_ok"] for r in rows),
        })
    return out


def table_rows(matrix: ExperimentMatrix, cells: list[dict]) -> tuple[list[str], list[dict]]:
    """One row per (beta, variant); FG/IL/HW column triples per (e, delta_bft) setting."""
    settings = list(itertools.product(matrix.epochs, matrix.delta_bfts))
    cols = ["schema_version", "beta", "variant"]
    for e, d in settings:
        cols += [f"fg_e{e}_dbft{d}", f"il_e{e}_dbft{d}", f"hw_e{e}_dbft{d}"]
    index = {(c["variant"], c["beta"], c["e"], c["delta_bft"]): c for c in cells}
    rows = []
    for beta in matrix.betas:
        for v in matrix.variants:
            row: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "beta": beta, "variant": v}
            for e, d in settings:
                c = index[(v, beta, e, d)]
                il = "inf" if c["il_infinite_trials"] == c["trials"] else c["il"]
                row.update({f"fg_e{e}_dbft{d}": c["fg"], f"il_e{e}_dbft{d}": il, f"hw_e{e}_dbft{d}": c["hw"]})
            rows.append(row)
    return cols, rows


def cq_curve_rows(matrix: ExperimentMatrix, cells: list[dict]) -> tuple[list[str], list[dict]]:
    """Chain quality against beta: two analytic curves plus every simulated variant."""
    e0, d0 = matrix.epochs[0], matrix.delta_bfts[0]
    cols = ["schema_version", "beta", "advocate_analytic", f"hooks_bound_t{matrix.hook_t_curve}"]
    cols += [f"{v}_empirical" for v in matrix.variants]
    index = {(c["variant"], c["beta"]): c for c in cells if c["e"] == e0 and c["delta_bft"] == d0}
    rows = []
    for beta in matrix.betas:
        row: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "beta": beta,
                               "advocate_analytic": optimal_chain_quality(beta),
                               f"hooks_bound_t{matrix.hook_t_curve}": bound_short_term_cq(beta, matrix.hook_t_curve)}
        for v in matrix.variants:
            row[f"{v}_empirical"] = index[(v, beta)]["cq"]
        rows.append(row)
    return cols, rows


def run_matrix(matrix: ExperimentMatrix) -> dict[str, str]:
    """Run every trial and write the CSV reports; returns file name -> contents."""
    jobs = [(cell, seed, matrix.base) for cell in matrix.cells() for seed in matrix.seeds]
    for cell, seed, _ in jobs:
        matrix.trial_config(cell, seed)  # surface configuration errors before any work
    log.info("running %d trials on %d worker(s)", len(jobs), matrix.workers)
    results = execute(jobs, matrix.workers)
    out = matrix.out_dir
    out.mkdir(parents=True, exist_ok=True)
    failures = [r for r in results if r.failure is not None]
    if failures:
        trace_dir = out / "failures"
        trace_dir.mkdir(exist_ok=True)
        lines = []
        for r in failures:
            c = r.cell
            path = trace_dir / f"{c.variant}_b{c.beta}_e{c.e}_d{c.delta_bft}_s{r.seed}.jsonl"
            path.write_text(r.log_text or "")
            lines.append(f"{path}: {r.failure}")
        raise SafetyViolation("safety violated in %d trial(s):\n  %s" % (len(failures), "\n  ".join(lines)))
    trials = [r.row for r in results]
    cells = cell_rows(matrix, results)
    tcols, trows = table_rows(matrix, cells)
    ccols, crows = cq_curve_rows(matrix, cells)
    files = {
        "trials.csv": to_csv(TRIAL_COLUMNS, trials),
        "cells.csv": to_csv(CELL_COLUMNS, cells),
        "tables.csv": to_csv(tcols, trows),
        "cq_vs_beta.csv": to_csv(ccols, crows),
    }
    for name, text in files.items():
        (out / name).write_text(text)
        log.info("wrote %s", out / name)
    return files


# -- command line ----------------------------------------------------------------------

def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs: Sequence[str]) -> dict[str, Any]:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        k = k.strip().replace("-", "_")
        if k not in SIM_FIELDS:
            raise ConfigError(f"unknown simulation key {k!r}")
        out[k] = _parse_value(v.strip())
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="advocate", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    m = sub.add_parser("matrix", help="run a trial matrix from a TOML file and write CSV reports")
    m.add_argument("config", type=Path)
    m.add_argument("-o", "--out", type=Path, default=None, help="output directory (overrides [output].dir)")
    m.add_argument("--seed", type=int, default=None, help="run every cell with this single seed")
    m.add_argument("--variant", action="append", default=None, help="keep only these variants (repeatable)")
    m.add_argument("-j", "--workers", type=int, default=None, help="worker processes")

    s = sub.add_parser("simulate", help="run one simulation and print its metrics as JSON")
    s.add_argument("settings", nargs="*", help="key=value simulation settings, e.g. beta=0.5 variant=advocate")
    s.add_argument("--log", type=Path, default=None, help="write the event log (JSON lines) here")
    s.add_argument("--no-reference", action="store_true", help="skip the beta=0 run (FG becomes nan)")

    b = sub.add_parser("bounds", help="evaluate the closed-form bounds")
    b.add_argument("--beta", type=float, default=0.5)
    b.add_argument("--h", type=float, default=0.5)
    b.add_argument("--e", type=int, default=5)
    b.add_argument("--c", type=int, default=2)
    b.add_argument("--t", type=int, default=None, help="hook depth; omit for no hooks")
    return ap


def cmd_matrix(a) -> int:
    matrix = load_matrix(a.config, a.seed, a.variant, a.out, a.workers)
    run_matrix(matrix)
    return 0


def cmd_simulate(a) -> int:
    cfg = SimConfig(**_overrides(a.settings)).validate()
    res, err = _run(cfg)
    if err is not None:
        if a.log:
            a.log.write_text(err[1])
        raise SafetyViolation(err[0])
    ref = None
    if not a.no_reference:
        ref, err = _run(cfg.replace(beta=0.0))
        if err is not None:
            raise SafetyViolation("reference run: " + err[0])
    if a.log:
        a.log.write_text(res.log.to_jsonl())
    rep = compute_report(res.log, ref.log if ref is not None else None).to_dict()
    rep = {k: fmt(v) if isinstance(v, float) and not math.isfinite(v) else v for k, v in rep.items()}
    print(json.dumps(rep, sort_keys=True))
    return 0


def cmd_bounds(a) -> int:
    out = {
        "liveness_rounds": bound_liveness(a.h, a.e),
        "safety_depth": bound_safety_depth(a.e, a.c),
        "optimal_chain_quality": optimal_chain_quality(a.beta),
        "inclusion_gap": fmt(bound_inclusion_gap(a.beta, a.t, a.e)) if a.t is None
        else bound_inclusion_gap(a.beta, a.t, a.e),
    }
    if a.t is not None and a.t >= 2:
        out["short_term_chain_quality"] = bound_short_term_cq(a.beta, a.t)
    print(json.dumps(out, sort_keys=True))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2), format="%(levelname)s %(message)s")
    handlers = {"matrix": cmd_matrix, "simulate": cmd_simulate, "bounds": cmd_bounds}
    try:
        return handlers[a.command](a)
    except SafetyViolation as exc:
        print(f"safety violation: {exc}", file=sys.stderr)
        return 3
    except (AdvocateError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
