"""Command-line entry point.

    drbo solve    --config solve.json    --out DIR [--seed N]
    drbo evaluate --config eval.json --design design.json --out DIR [--seed N] [--n N]
    drbo sweep    --config sweep.json    --out DIR [--workers K]
    drbo report   --out DIR              (re-render CSVs from DIR/grid.jsonl)

Exit status: 0 success, 2 configuration error, 3 runtime abort. Errors are
also written as a JSON object to stdout. Logs go to stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_json, parse_evaluate, parse_solve, parse_sweep
from .core import InvalidInputError, OracleError
from .evaluation import (
    MIN_EVAL_SAMPLES,
    EvaluationError,
    ExperimentReport,
    evaluate_design,
    run_misfit_experiment,
    run_parameter_sweep,
    run_time_shift_experiment,
)
from .solver import SolverAbort, run

log = logging.getLogger("drbo")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _fail(code: int, payload: dict) -> int:
    print(json.dumps(payload, sort_keys=True))
    log.error("%s", payload)
    return code


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(out: Path, command: str, config: dict, seed, outputs: dict, started: str) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": seed,
        "outputs": outputs,
        "started": started,
        "finished": _now(),
    })


def cmd_solve(args) -> int:
    started = _now()
    setup = parse_solve(load_json(args.config))
    solver = setup.solver
    if args.seed is not None:
        from dataclasses import replace

        solver = replace(solver, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {**setup.raw, "solver": solver.to_dict()}

    def progress(t, rec):
        if not args.quiet:
            log.info("iteration %d query %s acquisition %.6g", t, rec["query"], rec["acquisition"])

    outputs = {"trace": "trace.jsonl", "timings": "timings.jsonl", "design": "design.json"}
    try:
        design, trace = run(setup.problem, setup.nominal, solver, progress)
    except SolverAbort as exc:
        exc.trace.write(out / "trace.jsonl", out / "timings.jsonl")
        _manifest(out, "solve", resolved, solver.seed, outputs, started)
        return _fail(EXIT_ABORT, {"error": "solver-abort", "message": str(exc), "trace": str(out / "trace.jsonl")})
    except OracleError as exc:
        return _fail(EXIT_ABORT, {"error": "oracle", "message": str(exc)})
    trace.write(out / "trace.jsonl", out / "timings.jsonl")
    _write_json(out / "design.json", {"design": [float(v) for v in design], "selection": trace.selection})
    _manifest(out, "solve", resolved, solver.seed, outputs, started)
    return EXIT_OK


def _read_design(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise ConfigError([("design", f"file not found: {path}")])
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([("design", f"invalid JSON: {exc}")]) from None
    vals = obj.get("design") if isinstance(obj, dict) else obj
    try:
        return np.asarray(vals, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ConfigError([("design", "must be a list of numbers or {\"design\": [...]}")]) from None


def cmd_evaluate(args) -> int:
    started = _now()
    setup = parse_evaluate(load_json(args.config))
    design = _read_design(args.design)
    n = args.n if args.n is not None else setup.n_samples
    if n < MIN_EVAL_SAMPLES:
        raise ConfigError([("n", f"must be >= {MIN_EVAL_SAMPLES}, got {n}")])
    if design.size != setup.problem.design_dim or not setup.problem.space.contains(design):
        raise ConfigError([("design", f"must be a point of the {setup.problem.design_dim}-D design box")])
    seed = args.seed if args.seed is not None else 0
    try:
        report = evaluate_design(setup.problem, design, setup.distribution, n, seed)
    except EvaluationError as exc:
        return _fail(EXIT_ABORT, {"error": "evaluation", "message": str(exc)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "evaluation.json", report.to_dict())
    _manifest(out, "evaluate", {**setup.raw, "n_samples": n, "design": design.tolist()}, seed,
              {"report": "evaluation.json"}, started)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = _now()
    setup = parse_sweep(load_json(args.config))
    seed = args.seed if args.seed is not None else setup.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store = out / "cells"

    def progress(cell):
        if not args.quiet:
            log.info("cell %s/%s/r%d: %s", cell.group or "-", cell.method, cell.repeat, cell.status)

    common = dict(repeats=setup.repeats, n_eval=setup.n_eval, seed=seed, workers=args.workers,
                  store=store, progress=progress)
    x = setup.extra
    if setup.experiment == "time-shift":
        report = run_time_shift_experiment(setup.problem, setup.methods, x["family"], x["time_grid"], **common)
    elif setup.experiment == "misfit":
        report = run_misfit_experiment(setup.problem, setup.methods, x["true_distributions"],
                                       x["fit_sample_count"], x["noise_cov"], **common)
    else:
        report = run_parameter_sweep(setup.problem, x["nominal"], x["base_solver"], x["parameter"], x["values"], **common)
    report.write_grid(out / "grid.jsonl")
    paths = report.write_tables(out, setup.reference)
    outputs = {"grid": "grid.jsonl", "cells": "cells/", **{k: p.name for k, p in paths.items()}}
    _manifest(out, "sweep", setup.raw, seed, outputs, started)
    aborted = [c for c in report.cells if c.status != "ok"]
    if aborted:
        log.warning("%d of %d cells aborted", len(aborted), len(report.cells))
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    grid = out / "grid.jsonl"
    if not grid.is_file():
        raise ConfigError([("out", f"no grid.jsonl in {out}")])
    report = ExperimentReport.read_grid(grid)
    ref = args.reference
    report.write_tables(out, ref)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drbo", description="Distributionally robust Bayesian optimization runs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--quiet", action="store_true", help="suppress progress logging")

    common(sub.add_parser("solve", help="run the optimizer once"))
    ev = sub.add_parser("evaluate", help="Monte Carlo score of a fixed design")
    common(ev)
    ev.add_argument("--design", required=True, help="JSON file with the design")
    ev.add_argument("--n", type=int, default=None, help="number of variation draws")
    common(sub.add_parser("sweep", help="run an experiment grid (resumable)"))
    rp = sub.add_parser("report", help="re-render CSV tables from a grid file")
    common(rp, config=False)
    rp.add_argument("--reference", default=None, help="method used as the significance baseline")
    return p


COMMANDS = {"solve": cmd_solve, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc.to_dict())
    except InvalidInputError as exc:
        return _fail(EXIT_CONFIG, {"error": "config", "fields": [{"field": "", "message": str(exc)}]})


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
