"""Monte Carlo scoring of fixed designs and the experiment protocols built on it.

Seed scheme for experiments (children of the master seed):

    ("solver", group, repeat)          solver seed, shared by every method
    ("eval", group, repeat, test)      evaluation draws, shared by every method
    ("fit", group)                     noisy samples behind a fitted nominal

Sharing across methods means two methods in the same repeat start from the
same initial samples and are scored on the same variation draws, so method
differences are not masked by sampling noise. Repeats never share seeds.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .core import InvalidInputError, OracleError, ProblemSpec, indicator_array
from .distributions import add_noise, fit_gaussian, time_shift_at
from .rng import derive_seed, make_rng
from .solver import SolverAbort, SolverConfig, run

log = logging.getLogger(__name__)

MIN_EVAL_SAMPLES = 100
FAILURE_ALLOWANCE = 1e-3


class EvaluationError(RuntimeError):
    pass


@dataclass
class EvaluationReport:
    design: list
    test_distribution: dict
    n_samples: int
    mean_cost: float
    cost_stderr: float
    yield_: float
    yield_stderr: float
    violation_rates: list
    mean_objective: float
    n_failures: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(**d)


def _describe(dist) -> dict:
    return dist.to_config() if hasattr(dist, "to_config") else {"kind": type(dist).__name__}


def _evaluate_rows(problem: ProblemSpec, designs, xi):
    """Batched oracle call; on failure falls back to row-wise calls and marks the failures."""
    try:
        obj, margins = problem.evaluate_batch(designs, xi)
        ok = np.isfinite(obj) & np.all(np.isfinite(margins), axis=1)
        return obj, margins, ok
    except InvalidInputError:
        raise
    except Exception:  # noqa: BLE001 - any oracle failure is counted below
        pass
    n, k = xi.shape[0], problem.oracle.n_constraints
    obj, margins, ok = np.full(n, np.nan), np.full((n, k), np.nan), np.zeros(n, bool)
    for i in range(n):
        try:
            o, m = problem.evaluate_batch(designs[i : i + 1], xi[i : i + 1])
        except InvalidInputError:
            raise
        except Exception:  # noqa: BLE001
            continue
        obj[i], margins[i] = o[0], m[0]
        ok[i] = np.isfinite(o[0]) and np.all(np.isfinite(m[0]))
    return obj, margins, ok


def evaluate_design(problem: ProblemSpec, design, test_dist, n_samples: int = 5000, seed: int = 0) -> EvaluationReport:
    """Mean penalized cost and yield of ``design`` under ``test_dist``.

    Oracle failures are dropped if they are fewer than 0.1% of the draws,
    otherwise the evaluation aborts.
    """
    if n_samples < MIN_EVAL_SAMPLES:
        raise InvalidInputError(f"n_samples must be >= {MIN_EVAL_SAMPLES}")
    x = np.asarray(design, dtype=float).ravel()
    if x.size != problem.design_dim:
        raise InvalidInputError(f"design has {x.size} entries, problem expects {problem.design_dim}")
    xi = test_dist.sample_rng(make_rng(seed, "evaluate"), n_samples)
    designs = np.repeat(x[None, :], n_samples, axis=0)
    obj, margins, ok = _evaluate_rows(problem, designs, xi)
    n_fail = int(np.sum(~ok))
    if n_fail and n_fail >= FAILURE_ALLOWANCE * n_samples:
        raise EvaluationError(f"{n_fail} of {n_samples} oracle calls failed")
    obj, margins = obj[ok], margins[ok]
    n = obj.size
    ind = indicator_array(margins)
    cost = obj + problem.lam * ind
    rates = np.mean(margins > 0, axis=0) if margins.shape[1] else np.zeros(0)
    return EvaluationReport(
        design=x.tolist(),
        test_distribution=_describe(test_dist),
        n_samples=n,
        mean_cost=float(np.mean(cost)),
        cost_stderr=float(np.std(cost, ddof=1) / math.sqrt(n)),
        yield_=float(1.0 - np.mean(ind)),
        yield_stderr=float(np.std(ind, ddof=1) / math.sqrt(n)),
        violation_rates=[float(r) for r in rates],
        mean_objective=float(np.mean(obj)),
        n_failures=n_fail,
    )


def two_proportion_test(successes1: int, n1: int, successes2: int, n2: int) -> dict:
    """Pooled two-proportion z test (two-sided); 'significant' at the 95% level."""
    p1, p2 = successes1 / n1, successes2 / n2
    pooled = (successes1 + successes2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    z = 0.0 if se == 0 else (p1 - p2) / se
    p = float(2 * norm.sf(abs(z)))
    return {"p1": p1, "p2": p2, "z": z, "p_value": p, "significant": p < 0.05}


# ---------------------------------------------------------------------------
# experiment grids


@dataclass
class CellResult:
    method: str
    repeat: int
    group: str
    status: str
    final_design: list | None = None
    evaluations: dict = field(default_factory=dict)
    series: list = field(default_factory=list)
    error: str | None = None
    solver_seed: int | None = None

    @property
    def key(self) -> tuple:
        return (self.group, self.method, self.repeat)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["evaluations"] = {k: v.to_dict() for k, v in self.evaluations.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        d = dict(d)
        d["evaluations"] = {k: EvaluationReport.from_dict(v) for k, v in d["evaluations"].items()}
        return cls(**d)


@dataclass
class ExperimentReport:
    kind: str
    methods: list
    groups: list
    tests: list
    repeats: int
    cells: list
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        """(groups, methods, repeats, tests)."""
        return (len(self.groups), len(self.methods), self.repeats, len(self.tests))

    def cell(self, method: str, repeat: int, group: str = "") -> CellResult:
        for c in self.cells:
            if c.key == (group, method, repeat):
                return c
        raise KeyError((group, method, repeat))

    def values(self, method: str, test: str, field_name: str, group: str = "") -> np.ndarray:
        """Per-repeat values of one report field over completed cells."""
        out = []
        for r in range(self.repeats):
            c = self.cell(method, r, group)
            if c.status == "ok" and test in c.evaluations:
                out.append(getattr(c.evaluations[test], field_name))
        return np.asarray(out, dtype=float)

    def aggregate(self) -> list:
        """Mean and unbiased std across repeats for each (group, method, test)."""
        rows = []
        for g in self.groups:
            for m in self.methods:
                for t in self.tests:
                    cost = self.values(m, t, "mean_cost", g)
                    yl = self.values(m, t, "yield_", g)
                    n = cost.size
                    rows.append({
                        "group": g,
                        "method": m,
                        "test": t,
                        "n_completed": n,
                        "n_aborted": self.repeats - n,
                        "cost_mean": float(cost.mean()) if n else math.nan,
                        "cost_std": float(cost.std(ddof=1)) if n > 1 else math.nan,
                        "yield_mean": float(yl.mean()) if n else math.nan,
                        "yield_std": float(yl.std(ddof=1)) if n > 1 else math.nan,
                    })
        return rows

    def significance(self, reference: str) -> list:
        """Two-proportion tests of each method's pooled yield against ``reference``."""
        rows = []
        for g in self.groups:
            for t in self.tests:
                ref = self._pooled(reference, t, g)
                for m in self.methods:
                    if m == reference:
                        continue
                    s, n = self._pooled(m, t, g)
                    if n == 0 or ref[1] == 0:
                        continue
                    rows.append({"group": g, "test": t, "method": m, "reference": reference,
                                 **two_proportion_test(s, n, *ref)})
        return rows

    def _pooled(self, method: str, test: str, group: str):
        s = n = 0
        for r in range(self.repeats):
            c = self.cell(method, r, group)
            if c.status == "ok" and test in c.evaluations:
                e = c.evaluations[test]
                s += int(round(e.yield_ * e.n_samples))
                n += e.n_samples
        return s, n

    # ---- files

    def write_grid(self, path) -> None:
        with Path(path).open("w") as fh:
            head = {"type": "experiment", "kind": self.kind, "methods": self.methods, "groups": self.groups,
                    "tests": self.tests, "repeats": self.repeats, "meta": self.meta}
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for c in self.cells:
                fh.write(json.dumps({"type": "cell", **c.to_dict()}, sort_keys=True) + "\n")

    @classmethod
    def read_grid(cls, path) -> "ExperimentReport":
        head, cells = None, []
        with Path(path).open() as fh:
            for line in fh:
                obj = json.loads(line)
                kind = obj.pop("type")
                if kind == "experiment":
                    head = obj
                else:
                    cells.append(CellResult.from_dict(obj))
        if head is None:
            raise InvalidInputError(f"{path}: missing experiment header")
        return cls(head["kind"], head["methods"], head["groups"], head["tests"], head["repeats"], cells, head["meta"])

    def write_tables(self, out_dir, reference: str | None = None) -> dict:
        """summary.csv (long), table.csv (wide, one row per method), series.csv, significance.csv."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        rows = self.aggregate()
        paths["summary"] = _write_csv(out / "summary.csv", rows)
        wide = []
        for g in self.groups:
            for m in self.methods:
                row = {"group": g, "method": m}
                for r in rows:
                    if r["group"] == g and r["method"] == m:
                        t = r["test"]
                        for k in ("cost_mean", "cost_std", "yield_mean", "yield_std"):
                            row[f"{t}:{k}"] = r[k]
                wide.append(row)
        paths["table"] = _write_csv(out / "table.csv", wide)
        series = [
            {"group": c.group, "method": c.method, "repeat": c.repeat, **s}
            for c in self.cells
            for s in c.series
        ]
        if series:
            paths["series"] = _write_csv(out / "series.csv", series)
        if reference is not None and reference in self.methods:
            sig = self.significance(reference)
            if sig:
                paths["significance"] = _write_csv(out / "significance.csv", sig)
        return paths


def _write_csv(path: Path, rows: list) -> Path:
    keys = list(rows[0].keys()) if rows else []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in keys})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return json.dumps(v)
    return v


def read_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# ---- cell execution


@dataclass(frozen=True)
class _CellJob:
    problem: ProblemSpec
    nominal: object
    config: SolverConfig
    method: str
    repeat: int
    group: str
    tests: tuple  # ((label, distribution), ...)
    eval_seeds: tuple
    n_eval: int


def _run_cell(job: _CellJob) -> CellResult:
    cell = CellResult(job.method, job.repeat, job.group, "ok", solver_seed=job.config.seed)
    try:
        design, trace = run(job.problem, job.nominal, job.config)
    except SolverAbort as exc:
        cell.status, cell.error = "aborted", str(exc)
        return cell
    except OracleError as exc:
        cell.status, cell.error = "aborted", f"oracle failure: {exc}"
        return cell
    cell.final_design = [float(v) for v in design]
    try:
        for (label, dist), s in zip(job.tests, job.eval_seeds):
            cell.evaluations[label] = evaluate_design(job.problem, design, dist, job.n_eval, s)
        for rec in trace.iterations:
            if "selected" not in rec:
                continue
            point = {"iteration": rec["iteration"], "design": rec["selected"]}
            for (label, dist), s in zip(job.tests, job.eval_seeds):
                e = evaluate_design(job.problem, rec["selected"], dist, job.n_eval, s)
                point[f"{label}:cost"] = e.mean_cost
                point[f"{label}:yield"] = e.yield_
            cell.series.append(point)
    except EvaluationError as exc:
        cell.status, cell.error = "aborted", str(exc)
    return cell


def _cell_file(store: Path, job: _CellJob) -> Path:
    safe = "".join(ch if ch.isalnum() or ch in "-_.=" else "_" for ch in f"{job.group}__{job.method}__r{job.repeat}")
    return store / f"{safe}.json"


def run_cells(jobs: list, workers: int = 1, store=None, progress=None) -> list:
    """Run (or load, when ``store`` already holds them) every cell; results in job order."""
    results: list = [None] * len(jobs)
    todo = []
    store = Path(store) if store is not None else None
    if store is not None:
        store.mkdir(parents=True, exist_ok=True)
    for i, job in enumerate(jobs):
        if store is not None and _cell_file(store, job).exists():
            results[i] = CellResult.from_dict(json.loads(_cell_file(store, job).read_text()))
        else:
            todo.append(i)

    def finish(i, cell):
        results[i] = cell
        if store is not None:
            tmp = _cell_file(store, jobs[i]).with_suffix(".tmp")
            tmp.write_text(json.dumps(cell.to_dict(), sort_keys=True))
            tmp.replace(_cell_file(store, jobs[i]))
        if progress is not None:
            progress(cell)

    if workers <= 1:
        for i in todo:
            finish(i, _run_cell(jobs[i]))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {i: pool.submit(_run_cell, jobs[i]) for i in todo}
            for i in todo:
                finish(i, futures[i].result())
    return results


def _eval_seeds(seed: int, group: str, repeat: int, tests) -> tuple:
    return tuple(derive_seed(seed, "eval", group, repeat, label) for label, _ in tests)


def _jobs(problem, nominal, methods: dict, repeats: int, group: str, tests, n_eval: int, seed: int) -> list:
    jobs = []
    for name, cfg in methods.items():
        for r in range(repeats):
            solver_cfg = replace(cfg, seed=derive_seed(seed, "solver", group, r))
            jobs.append(_CellJob(problem, nominal, solver_cfg, name, r, group, tuple(tests),
                                 _eval_seeds(seed, group, r, tests), n_eval))
    return jobs


def _check_methods(methods: dict, repeats: int) -> None:
    if not methods:
        raise InvalidInputError("at least one solver configuration is required")
    if repeats < 1:
        raise InvalidInputError("repeats must be >= 1")


def run_time_shift_experiment(problem: ProblemSpec, solver_configs: dict, shift_family, time_grid, repeats: int,
                              n_eval: int = 5000, seed: int = 0, workers: int = 1, store=None,
                              progress=None) -> ExperimentReport:
    """Solve once per (method, repeat) against the t = 0 nominal and score under each t."""
    grid = [float(t) for t in time_grid]
    if not grid:
        raise InvalidInputError("time grid is empty")
    _check_methods(solver_configs, repeats)
    nominal = time_shift_at(shift_family, 0.0)
    tests = [(f"t={t:g}", time_shift_at(shift_family, t)) for t in grid]
    jobs = _jobs(problem, nominal, solver_configs, repeats, "", tests, n_eval, seed)
    cells = run_cells(jobs, workers, store, progress)
    meta = {"seed": seed, "n_eval": n_eval, "time_grid": grid, "family": shift_family.to_config(),
            "problem": problem.name, "lambda": problem.lam}
    return ExperimentReport("time-shift", list(solver_configs), [""], [t for t, _ in tests], repeats, cells, meta)


def fitted_nominal(true_dist, fit_sample_count: int, noise_cov, seed: int):
    """Gaussian fitted to noisy draws from ``true_dist``."""
    raw = true_dist.sample_rng(make_rng(seed, "fit-samples"), fit_sample_count)
    return fit_gaussian(add_noise(raw, noise_cov, derive_seed(seed, "fit-noise")))


def run_misfit_experiment(problem: ProblemSpec, solver_configs: dict, true_gmm_list, fit_sample_count: int = 500,
                          noise_cov=None, repeats: int = 5, n_eval: int = 5000, seed: int = 0, workers: int = 1,
                          store=None, progress=None) -> ExperimentReport:
    """For each true distribution: fit a nominal from noisy draws, solve against it, score under both.

    ``true_gmm_list`` is a list of (label, distribution) pairs.
    """
    _check_methods(solver_configs, repeats)
    if not true_gmm_list:
        raise InvalidInputError("need at least one true distribution")
    d = problem.variation_dim
    noise_cov = 1e-4 * np.eye(d) if noise_cov is None else np.asarray(noise_cov, dtype=float)
    jobs, groups, nominals = [], [], {}
    for label, truth in true_gmm_list:
        nominal = fitted_nominal(truth, fit_sample_count, noise_cov, derive_seed(seed, "fit", label))
        nominals[label] = nominal.to_config()
        groups.append(label)
        tests = [("nominal", nominal), ("true", truth)]
        jobs += _jobs(problem, nominal, solver_configs, repeats, label, tests, n_eval, seed)
    cells = run_cells(jobs, workers, store, progress)
    meta = {"seed": seed, "n_eval": n_eval, "fit_sample_count": fit_sample_count,
            "noise_cov": noise_cov.tolist(), "nominals": nominals, "problem": problem.name, "lambda": problem.lam}
    return ExperimentReport("misfit", list(solver_configs), groups, ["nominal", "true"], repeats, cells, meta)


def run_parameter_sweep(problem: ProblemSpec, nominal, base_config: SolverConfig, parameter: str, values,
                        repeats: int = 5, n_eval: int = 5000, seed: int = 0, workers: int = 1, store=None,
                        progress=None, tests=None) -> ExperimentReport:
    """One solve-and-score per (value, repeat); methods are labelled ``parameter=value``."""
    if parameter not in ("epsilon", "L"):
        raise InvalidInputError("parameter must be 'epsilon' or 'L'")
    values = list(values)
    if not values:
        raise InvalidInputError("values must be nonempty")
    cast = int if parameter == "L" else float
    methods = {f"{parameter}={v:g}": replace(base_config, **{parameter: cast(v)}) for v in values}
    tests = list(tests) if tests else [("nominal", nominal)]
    jobs = _jobs(problem, nominal, methods, repeats, "", tests, n_eval, seed)
    cells = run_cells(jobs, workers, store, progress)
    meta = {"seed": seed, "n_eval": n_eval, "parameter": parameter, "values": [cast(v) for v in values],
            "problem": problem.name, "lambda": problem.lam}
    return ExperimentReport("sweep", list(methods), [""], [t for t, _ in tests], repeats, cells, meta)
