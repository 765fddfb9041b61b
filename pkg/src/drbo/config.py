"""Versioned JSON run configurations.

Every file is a single JSON object with ``"version": 1``. Unknown keys are
errors at every level so that a typo in a solver field never silently falls
back to a default. ``problem.lambda`` is mandatory.

solve:
    {"version": 1, "problem": {...}, "nominal": <distribution>, "solver": {...}}
evaluate:
    {"version": 1, "problem": {...}, "distribution": <distribution>, "n_samples": 5000}
sweep (``experiment`` selects the protocol):
    {"version": 1, "experiment": "time-shift", "problem": {...}, "methods": {label: {...}},
     "family": <time-shift family>, "time_grid": [...], "repeats": 5, "n_eval": 5000}
    {"version": 1, "experiment": "misfit", ..., "true_distributions": [{"label", "distribution"}],
     "fit_sample_count": 500, "noise_cov": [[...]]}
    {"version": 1, "experiment": "sweep", ..., "nominal": <distribution>, "base_solver": {...},
     "parameter": "epsilon", "values": [...]}

problem:
    {"benchmark": "mzi" | "amp" | "quadratic" | "linear_margin", "lambda": float,
     "risk_tolerance": float (optional), "params": {proxy overrides} (optional)}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .benchmarks import build_problem
from .core import InvalidInputError, ProblemSpec
from .distributions import distribution_from_config, family_from_config
from .solver import SolverConfig

CONFIG_VERSION = 1


class ConfigError(InvalidInputError):
    """Invalid configuration; ``errors`` lists (field path, message) pairs."""

    def __init__(self, errors: list):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))

    def to_dict(self) -> dict:
        return {"error": "config", "fields": [{"field": p, "message": m} for p, m in self.errors]}


def load_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError([(str(path), "file not found")])
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([(str(path), f"invalid JSON: {exc}")]) from None
    if not isinstance(data, dict):
        raise ConfigError([(str(path), "top level must be an object")])
    return data


class _Checker:
    def __init__(self):
        self.errors: list = []

    def keys(self, obj, prefix: str, required: set, optional: set = frozenset()) -> bool:
        if not isinstance(obj, dict):
            self.errors.append((prefix or "<root>", "must be an object"))
            return False
        for k in sorted(required - set(obj)):
            self.errors.append((_join(prefix, k), "missing required key"))
        for k in sorted(set(obj) - required - set(optional)):
            self.errors.append((_join(prefix, k), "unknown key"))
        return True

    def attempt(self, path: str, fn, *args):
        try:
            return fn(*args)
        except (InvalidInputError, TypeError, ValueError, KeyError) as exc:
            self.errors.append((path, str(exc)))
            return None

    def raise_if_any(self):
        if self.errors:
            raise ConfigError(self.errors)


def _join(prefix: str, key: str) -> str:
    return f"{prefix}.{key}" if prefix else key


SOLVER_FIELDS = {f.name for f in fields(SolverConfig)}


def _version(chk: _Checker, cfg: dict) -> None:
    if cfg.get("version") != CONFIG_VERSION:
        chk.errors.append(("version", f"expected {CONFIG_VERSION}, got {cfg.get('version')!r}"))


def parse_problem(obj, chk: _Checker, prefix: str = "problem") -> ProblemSpec | None:
    if not chk.keys(obj, prefix, {"benchmark", "lambda"}, {"risk_tolerance", "params"}):
        return None
    if "benchmark" not in obj or "lambda" not in obj:
        return None
    lam = obj["lambda"]
    if not isinstance(lam, (int, float)) or isinstance(lam, bool):
        chk.errors.append((_join(prefix, "lambda"), "must be a number"))
        return None
    return chk.attempt(prefix, build_problem, obj["benchmark"], float(lam), obj.get("params"),
                       float(obj.get("risk_tolerance", 0.05)))


def parse_solver(obj, chk: _Checker, prefix: str) -> SolverConfig | None:
    n_errors = len(chk.errors)
    if not chk.keys(obj, prefix, set(), SOLVER_FIELDS) or len(chk.errors) > n_errors:
        return None
    return chk.attempt(prefix, lambda: SolverConfig(**obj))


def _distribution(obj, chk: _Checker, prefix: str):
    if not isinstance(obj, dict):
        chk.errors.append((prefix, "must be an object"))
        return None
    return chk.attempt(prefix, distribution_from_config, obj)


@dataclass
class SolveSetup:
    problem: ProblemSpec
    nominal: object
    solver: SolverConfig
    raw: dict


def parse_solve(cfg: dict) -> SolveSetup:
    chk = _Checker()
    chk.keys(cfg, "", {"version", "problem", "nominal", "solver"})
    _version(chk, cfg)
    problem = parse_problem(cfg.get("problem", {}), chk) if "problem" in cfg else None
    nominal = _distribution(cfg["nominal"], chk, "nominal") if "nominal" in cfg else None
    solver = parse_solver(cfg.get("solver", {}), chk, "solver") if "solver" in cfg else None
    if problem is not None and nominal is not None and nominal.dimension != problem.variation_dim:
        chk.errors.append(("nominal", f"dimension {nominal.dimension} != problem variation dimension {problem.variation_dim}"))
    chk.raise_if_any()
    return SolveSetup(problem, nominal, solver, cfg)


@dataclass
class EvaluateSetup:
    problem: ProblemSpec
    distribution: object
    n_samples: int
    raw: dict


def parse_evaluate(cfg: dict) -> EvaluateSetup:
    chk = _Checker()
    chk.keys(cfg, "", {"version", "problem", "distribution"}, {"n_samples"})
    _version(chk, cfg)
    problem = parse_problem(cfg.get("problem", {}), chk) if "problem" in cfg else None
    dist = _distribution(cfg["distribution"], chk, "distribution") if "distribution" in cfg else None
    n = cfg.get("n_samples", 5000)
    if not isinstance(n, int) or isinstance(n, bool):
        chk.errors.append(("n_samples", "must be an integer"))
    chk.raise_if_any()
    return EvaluateSetup(problem, dist, n, cfg)


EXPERIMENTS = {
    "time-shift": ({"family", "time_grid", "methods"}, set()),
    "misfit": ({"true_distributions", "methods"}, {"fit_sample_count", "noise_cov"}),
    "sweep": ({"nominal", "base_solver", "parameter", "values"}, set()),
}
COMMON_SWEEP = {"version", "experiment", "problem"}
OPTIONAL_SWEEP = {"repeats", "n_eval", "seed", "reference"}


@dataclass
class SweepSetup:
    experiment: str
    problem: ProblemSpec
    repeats: int
    n_eval: int
    seed: int
    reference: str | None
    methods: dict
    extra: dict
    raw: dict


def parse_sweep(cfg: dict) -> SweepSetup:
    chk = _Checker()
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError([("experiment", f"must be one of {sorted(EXPERIMENTS)}, got {exp!r}")])
    req, opt = EXPERIMENTS[exp]
    chk.keys(cfg, "", COMMON_SWEEP | req, OPTIONAL_SWEEP | opt)
    _version(chk, cfg)
    problem = parse_problem(cfg.get("problem", {}), chk) if "problem" in cfg else None
    repeats = cfg.get("repeats", 5)
    n_eval = cfg.get("n_eval", 5000)
    seed = cfg.get("seed", 0)
    for key, val in (("repeats", repeats), ("n_eval", n_eval), ("seed", seed)):
        if not isinstance(val, int) or isinstance(val, bool) or val < 0:
            chk.errors.append((key, "must be a nonnegative integer"))
    methods, extra = {}, {}
    if "methods" in cfg:
        if not isinstance(cfg["methods"], dict) or not cfg["methods"]:
            chk.errors.append(("methods", "must be a nonempty object of label -> solver config"))
        else:
            for label, sc in cfg["methods"].items():
                methods[label] = parse_solver(sc, chk, f"methods.{label}")
    if exp == "time-shift":
        extra["family"] = chk.attempt("family", family_from_config, cfg.get("family", {})) if "family" in cfg else None
        grid = cfg.get("time_grid", [])
        if not isinstance(grid, list) or not grid:
            chk.errors.append(("time_grid", "must be a nonempty list"))
        extra["time_grid"] = grid
    elif exp == "misfit":
        truths = []
        for i, item in enumerate(cfg.get("true_distributions", [])):
            p = f"true_distributions[{i}]"
            if chk.keys(item, p, {"label", "distribution"}) and "distribution" in item:
                truths.append((str(item.get("label", i)), _distribution(item["distribution"], chk, f"{p}.distribution")))
        if not truths:
            chk.errors.append(("true_distributions", "must be a nonempty list"))
        extra["true_distributions"] = truths
        extra["fit_sample_count"] = cfg.get("fit_sample_count", 500)
        extra["noise_cov"] = cfg.get("noise_cov")
    else:
        extra["nominal"] = _distribution(cfg.get("nominal"), chk, "nominal") if "nominal" in cfg else None
        base = parse_solver(cfg.get("base_solver", {}), chk, "base_solver") if "base_solver" in cfg else None
        extra["base_solver"] = base
        if cfg.get("parameter") not in ("epsilon", "L"):
            chk.errors.append(("parameter", "must be 'epsilon' or 'L'"))
        vals = cfg.get("values")
        if not isinstance(vals, list) or not vals:
            chk.errors.append(("values", "must be a nonempty list"))
        extra["parameter"] = cfg.get("parameter")
        extra["values"] = vals
    chk.raise_if_any()
    return SweepSetup(exp, problem, repeats, n_eval, seed, cfg.get("reference"), methods, extra, cfg)
