"""The outer DRBO loop.

Each iteration fits the surrogates on everything simulated so far, minimizes
the DR-LCB acquisition over the design box using a fresh set of L nominal
variation samples, pairs the chosen design with B fresh nominal draws, runs
the oracle on those B pairs and appends the results. After the last iteration
a design is selected from the explored ones using the posterior robust
objective.

Random streams (all children of ``config.seed``):

    ("init", i)                initial record i: design, then variation
    ("iter", t, "acq")         the L acquisition samples of iteration t
    ("iter", t, "inner")       inner optimizer starts
    ("iter", t, "gp")          regressor restarts
    ("iter", t, "gpc")         classifier restarts
    ("iter", t, "group", b)    grouped variation b of iteration t
    ("select",)                variation samples used by the final selection

None of them depend on ``epsilon`` or ``mode``, so a plain-LCB run and an
ε = 0 run with the same seed draw exactly the same numbers.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionConfig, minimize_acquisition, pattern_search
from .core import Dataset, InvalidInputError, OracleError, ProblemSpec
from .rng import derive_seed, make_rng
from .surrogate import (
    ClassifierFitError,
    ClassifierSearch,
    IllConditionedError,
    KernelSearch,
    SurrogatePair,
    fit_classifier,
    fit_regressor,
)
from .surrogate.regression import refit

log = logging.getLogger(__name__)

SELECTIONS = ("posterior-argmin", "last-k-best")
SURROGATE_MODES = ("dual", "single")


class SolverAbort(RuntimeError):
    """Raised when the surrogate cannot be fitted; carries the partial trace."""

    def __init__(self, message: str, trace: "RunTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    initial_samples: int = 200
    max_iterations: int = 150
    group_batch: int = 5
    epsilon: float = 0.1
    beta: float = 2.0
    L: int = 300
    mode: str = "dr-lcb"
    selection: str = "posterior-argmin"
    selection_k: int = 5
    seed: int = 0
    inner_budget: int = 2000
    inner_optimizer: str = "pattern"
    inner_starts: int = 16
    surrogate: str = "dual"
    gp_starts: int = 5
    refit_row_threshold: int = 500
    refit_every_large: int = 5
    classifier_refit_every: int = 10
    early_stop: int = 0
    continuous_selection: bool = False
    track_every: int = 0
    selection_samples: int = 0
    reg_refit_max_iter: int = 50
    cls_refit_max_iter: int = 20

    def __post_init__(self):
        if self.initial_samples < 2:
            raise InvalidInputError("initial_samples must be >= 2")
        if self.max_iterations < 0:
            raise InvalidInputError("max_iterations must be >= 0")
        if self.group_batch < 1 or self.selection_k < 1 or self.L < 1:
            raise InvalidInputError("group_batch, selection_k and L must be >= 1")
        if self.epsilon < 0 or self.beta < 0:
            raise InvalidInputError("epsilon and beta must be nonnegative")
        if self.selection not in SELECTIONS:
            raise InvalidInputError(f"selection must be one of {SELECTIONS}")
        if self.surrogate not in SURROGATE_MODES:
            raise InvalidInputError(f"surrogate must be one of {SURROGATE_MODES}")
        if self.mode not in ("dr-lcb", "lcb"):
            raise InvalidInputError("mode must be 'dr-lcb' or 'lcb'")
        if self.inner_budget < 1 or min(self.early_stop, self.track_every, self.selection_samples) < 0:
            raise InvalidInputError("inner_budget must be >= 1; early_stop and track_every >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")

    @property
    def effective_epsilon(self) -> float:
        return 0.0 if self.mode == "lcb" else float(self.epsilon)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunTrace:
    """Everything needed to audit and replay a run.

    ``iterations`` hold only deterministic content; wall-clock times live in
    ``timings`` and are written to a separate file so that two runs with the
    same seed produce byte-identical trace files.
    """

    config: SolverConfig
    problem: str
    initial: dict = field(default_factory=dict)
    iterations: list = field(default_factory=list)
    final_design: np.ndarray | None = None
    selection: dict = field(default_factory=dict)
    status: str = "running"
    timings: list = field(default_factory=list)
    dataset: Dataset | None = field(default=None, repr=False)

    @property
    def queries(self) -> np.ndarray:
        if not self.iterations:
            designs = self.initial.get("designs") or [[]]
            return np.empty((0, len(designs[0])))
        return np.array([r["query"] for r in self.iterations])

    def header(self) -> dict:
        return {"type": "header", "problem": self.problem, "config": self.config.to_dict(), "initial": self.initial}

    def summary(self) -> dict:
        fd = None if self.final_design is None else [float(v) for v in self.final_design]
        return {
            "type": "summary",
            "status": self.status,
            "final_design": fd,
            "n_iterations": len(self.iterations),
            "n_records": None if self.dataset is None else len(self.dataset),
            "selection": self.selection,
        }

    def lines(self):
        yield self.header()
        for rec in self.iterations:
            yield {"type": "iteration", **rec}
        yield self.summary()

    def write(self, path, timings_path=None) -> None:
        path = Path(path)
        with path.open("w") as fh:
            for obj in self.lines():
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
        if timings_path is not None:
            with Path(timings_path).open("w") as fh:
                for t, secs in enumerate(self.timings):
                    fh.write(json.dumps({"iteration": t, "seconds": secs}) + "\n")

    @classmethod
    def read(cls, path) -> "RunTrace":
        header, iters, summary = None, [], None
        with Path(path).open() as fh:
            for line in fh:
                obj = json.loads(line)
                kind = obj.pop("type")
                if kind == "header":
                    header = obj
                elif kind == "iteration":
                    iters.append(obj)
                elif kind == "summary":
                    summary = obj
        if header is None:
            raise InvalidInputError(f"{path}: no header record")
        trace = cls(SolverConfig(**header["config"]), header["problem"], header.get("initial", {}), iters)
        if summary is not None:
            trace.status = summary["status"]
            fd = summary["final_design"]
            trace.final_design = None if fd is None else np.asarray(fd, dtype=float)
            trace.selection = summary["selection"]
        return trace


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def initialize(problem: ProblemSpec, nominal, config: SolverConfig) -> Dataset:
    """M records with uniform designs and nominal variations, one stream per record."""
    data = Dataset.empty(problem.design_dim, problem.variation_dim, problem.oracle.n_constraints, problem.lam)
    designs = np.empty((config.initial_samples, problem.design_dim))
    variations = np.empty((config.initial_samples, problem.variation_dim))
    seeds = []
    for i in range(config.initial_samples):
        rng = make_rng(config.seed, "init", i)
        designs[i] = problem.space.uniform(rng, 1)[0]
        variations[i] = nominal.sample_rng(rng, 1)[0]
        seeds.append(derive_seed(config.seed, "init", i))
    obj, margins = _simulate(problem, designs, variations)
    data.append(designs, variations, obj, margins, seeds)
    return data


def _simulate(problem: ProblemSpec, designs, variations):
    try:
        obj, margins = problem.evaluate_batch(designs, variations)
    except InvalidInputError:
        raise
    except Exception as exc:
        raise OracleError(f"oracle failed: {exc}", designs, variations) from exc
    bad = ~(np.isfinite(obj) & np.all(np.isfinite(margins), axis=1))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise OracleError("oracle returned a non-finite output", designs[i], variations[i])
    return obj, margins


class _Surrogates:
    """Owns the fitted models and the refit cadence."""

    def __init__(self, problem: ProblemSpec, config: SolverConfig):
        self.problem = problem
        self.config = config
        self.dual = config.surrogate == "dual" and problem.oracle.n_constraints > 0
        self.reg = None
        self.cls = None
        self.noise_floor = KernelSearch().noise_bounds[0]

    def _reg_search(self) -> KernelSearch:
        lo, hi = KernelSearch().noise_bounds
        return KernelSearch(n_starts=self.config.gp_starts, noise_bounds=(self.noise_floor, hi))

    def update(self, data: Dataset, t: int) -> SurrogatePair:
        cfg = self.config
        x = data.inputs
        y = data.objectives if self.dual else data.penalized
        every = 1 if len(data) <= cfg.refit_row_threshold else cfg.refit_every_large
        optimize = self.reg is None or t % every == 0
        for attempt in range(3):
            try:
                if self.reg is None:
                    self.reg = fit_regressor(x, y, self._reg_search(), derive_seed(cfg.seed, "iter", t, "gp"))
                else:
                    search = replace(self._reg_search(), max_iter=cfg.reg_refit_max_iter)
                    self.reg = refit(self.reg, x, y, search, derive_seed(cfg.seed, "iter", t, "gp"), optimize)
                break
            except IllConditionedError:
                if attempt == 2:
                    raise
                # raise the noise floor and refit from scratch
                self.noise_floor = min(1e-2, self.noise_floor * 1e3)
                self.reg = None
                log.warning("iteration %d: ill-conditioned Gram matrix; noise floor -> %g", t, self.noise_floor)
        if self.dual:
            labels = data.infeasible
            seed = derive_seed(cfg.seed, "iter", t, "gpc")
            if self.cls is None:
                self.cls = fit_classifier(x, labels, ClassifierSearch(), seed)
            elif cfg.classifier_refit_every and t % cfg.classifier_refit_every == 0:
                search = ClassifierSearch(n_starts=1, initial=self.cls.kernel, max_iter=cfg.cls_refit_max_iter)
                warm = np.r_[self.cls.latent_mode, np.zeros(len(data) - self.cls.labels.size)]
                self.cls = fit_classifier(x, labels, search, seed, init_latent=warm)
            else:
                self.cls = self.cls.with_data(x, labels)
        return SurrogatePair(self.reg, self.cls if self.dual else None, self.problem.lam)


def posterior_robust_values(surrogates: SurrogatePair, designs, xi, epsilon: float) -> np.ndarray:
    """Posterior estimate of mean + sqrt(ε·Var) over the samples ``xi`` for each design row."""
    designs = np.atleast_2d(np.asarray(designs, dtype=float))
    xi = np.atleast_2d(xi)
    p, l = designs.shape[0], xi.shape[0]
    joint = np.hstack([np.repeat(designs, l, axis=0), np.tile(xi, (p, 1))])
    mu = surrogates.predict_mean(joint).reshape(p, l)
    mean = mu.mean(axis=1)
    var = np.mean((mu - mean[:, None]) ** 2, axis=1)
    return mean + np.sqrt(epsilon * var)


def _unique_rows(a: np.ndarray) -> np.ndarray:
    """Unique rows in first-appearance order."""
    _, idx = np.unique(a, axis=0, return_index=True)
    return a[np.sort(idx)]


def select_design(data: Dataset, surrogates: SurrogatePair, config: SolverConfig, xi,
                  candidates=None, n_queries: int | None = None, space=None):
    """Pick the final design; returns (design, diagnostics).

    Candidates default to every explored design (initial and queried); the
    last-k-best rule keeps only the last k queried ones. With
    ``config.continuous_selection`` the best candidate seeds a pattern search
    of the posterior objective over the box.
    """
    eps = config.effective_epsilon
    if candidates is None:
        if config.selection == "last-k-best" and n_queries:
            queried = data.designs[config.initial_samples :][:: config.group_batch]
            candidates = queried[-config.selection_k :]
        else:
            candidates = _unique_rows(data.designs)
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] == 0:
        raise InvalidInputError("candidate set is empty")
    values = posterior_robust_values(surrogates, candidates, xi, eps)
    i = int(np.argmin(values))
    best, best_val = candidates[i].copy(), float(values[i])
    assert np.all(best_val <= values), "selected design is not the posterior minimizer"
    diag = {"rule": config.selection, "n_candidates": int(candidates.shape[0]), "value": best_val, "index": i}
    if config.continuous_selection and space is not None:
        fn = lambda x: posterior_robust_values(surrogates, x, xi, eps)  # noqa: E731
        res = pattern_search(fn, space, config.inner_budget, derive_seed(config.seed, "select-continuous"),
                             n_starts=1, starts=best[None, :])
        if res.value < best_val:
            best, best_val = res.x, float(res.value)
            diag.update(value=best_val, continuous=True)
    return best, diag


def _warm_starts(data: Dataset, trace: RunTrace, config: SolverConfig) -> np.ndarray:
    """Previous query and the design of the best observed penalized cost."""
    rows = [data.designs[int(np.argmin(data.penalized))]]
    if trace.iterations:
        rows.insert(0, np.asarray(trace.iterations[-1]["query"]))
    return np.array(rows)


def run(problem: ProblemSpec, nominal, config: SolverConfig, progress=None):
    """Execute the loop; returns (final design, RunTrace).

    Raises SolverAbort (with the partial trace attached) if the surrogate
    cannot be fitted at some iteration.
    """
    if nominal.dimension != problem.variation_dim:
        raise InvalidInputError("nominal distribution dimension does not match the problem")
    data = initialize(problem, nominal, config)
    trace = RunTrace(config, problem.name, dataset=data)
    trace.initial = {
        "n": len(data),
        "designs": _floats(data.designs),
        "variations": _floats(data.variations),
        "objectives": _floats(data.objectives),
        "margins": _floats(data.margins),
    }
    models = _Surrogates(problem, config)
    last_selected, stable = None, 0
    surrogates = None
    for t in range(config.max_iterations):
        t0 = time.perf_counter()
        try:
            surrogates = models.update(data, t)
        except (IllConditionedError, ClassifierFitError) as exc:
            trace.status = "aborted"
            trace.selection = {"error": str(exc), "iteration": t}
            raise SolverAbort(f"surrogate fit failed at iteration {t}: {exc}", trace) from exc
        xi = nominal.sample_rng(make_rng(config.seed, "iter", t, "acq"), config.L)
        acq = AcquisitionConfig(config.epsilon, xi, config.beta, config.mode)
        res = minimize_acquisition(acq, surrogates, problem.space, config.inner_budget,
                                   derive_seed(config.seed, "iter", t, "inner"),
                                   optimizer=config.inner_optimizer, n_starts=config.inner_starts,
                                   starts=_warm_starts(data, trace, config))
        x_t = problem.space.clip(res.x)
        group = np.vstack([nominal.sample_rng(make_rng(config.seed, "iter", t, "group", b), 1)
                           for b in range(config.group_batch)])
        designs = np.repeat(x_t[None, :], config.group_batch, axis=0)
        obj, margins = _simulate(problem, designs, group)
        data.append(designs, group, obj, margins,
                    [derive_seed(config.seed, "iter", t, "group", b) for b in range(config.group_batch)])
        record = {
            "iteration": t,
            "query": _floats(x_t),
            "acquisition": float(res.value),
            "inner_probes": int(res.n_probes),
            "variations": _floats(group),
            "objectives": _floats(obj),
            "margins": _floats(margins),
            "hyperparameters": surrogates.hyperparameters(),
        }
        track = config.track_every and ((t + 1) % config.track_every == 0 or t + 1 == config.max_iterations)
        if track or config.early_stop:
            sel, _ = select_design(data, surrogates, config, xi, n_queries=t + 1)
            record["selected"] = _floats(sel)
            if config.early_stop:
                stable = stable + 1 if last_selected is not None and np.array_equal(sel, last_selected) else 0
                last_selected = sel
        trace.iterations.append(record)
        trace.timings.append(time.perf_counter() - t0)
        if progress is not None:
            progress(t, record)
        if config.early_stop and stable >= config.early_stop:
            trace.selection["stopped_early"] = t
            break

    try:
        surrogates = models.update(data, len(trace.iterations))
    except (IllConditionedError, ClassifierFitError) as exc:
        trace.status = "aborted"
        trace.selection = {"error": str(exc), "iteration": len(trace.iterations)}
        raise SolverAbort(f"final surrogate fit failed: {exc}", trace) from exc
    xi_sel = nominal.sample_rng(make_rng(config.seed, "select"), config.selection_samples or config.L)
    final, diag = select_design(data, surrogates, config, xi_sel, n_queries=len(trace.iterations), space=problem.space)
    trace.final_design = final
    trace.selection.update(diag)
    trace.status = "complete"
    return final, trace


def replay(problem: ProblemSpec, nominal, trace: RunTrace) -> bool:
    """Re-run from the trace's config and compare every query design bitwise."""
    config = replace(trace.config, max_iterations=len(trace.iterations), early_stop=0)
    _, fresh = run(problem, nominal, config)
    return np.array_equal(fresh.queries, trace.queries)
