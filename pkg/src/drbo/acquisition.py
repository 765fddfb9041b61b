"""Distributionally robust LCB acquisition and its inner minimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DesignSpace, InvalidInputError
from .rng import make_rng

MODES = ("dr-lcb", "lcb")


def dr_objective(mean, variance, epsilon: float):
    """Worst-case expectation over the χ² ball, mean + sqrt(epsilon * variance)."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise InvalidInputError("variance must be nonnegative (clamp before calling)")
    if epsilon < 0:
        raise InvalidInputError("epsilon must be nonnegative")
    out = np.asarray(mean, dtype=float) + np.sqrt(epsilon * variance)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AcquisitionConfig:
    epsilon: float
    variation_samples: np.ndarray
    beta: float = 2.0
    mode: str = "dr-lcb"

    def __post_init__(self):
        xi = np.atleast_2d(np.asarray(self.variation_samples, dtype=float))
        object.__setattr__(self, "variation_samples", xi)
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")
        if self.epsilon < 0 or self.beta < 0:
            raise InvalidInputError("epsilon and beta must be nonnegative")
        if xi.shape[0] < 1:
            raise InvalidInputError("need at least one variation sample")

    @property
    def L(self) -> int:
        return int(self.variation_samples.shape[0])

    @property
    def effective_epsilon(self) -> float:
        # plain LCB is the ε = 0 member of the family
        return 0.0 if self.mode == "lcb" else float(self.epsilon)


def _joint(designs: np.ndarray, xi: np.ndarray) -> np.ndarray:
    p, l = designs.shape[0], xi.shape[0]
    return np.hstack([np.repeat(designs, l, axis=0), np.tile(xi, (p, 1))])


def acquisition_terms(config: AcquisitionConfig, surrogates, designs):
    """Per-design (LCB average, spread) where spread = (1/L) sum (mu_l - mean mu)^2."""
    designs = np.atleast_2d(np.asarray(designs, dtype=float))
    xi = config.variation_samples
    mu, sd = surrogates.predict(_joint(designs, xi))
    mu = mu.reshape(designs.shape[0], xi.shape[0])
    sd = sd.reshape(designs.shape[0], xi.shape[0])
    lcb = np.mean(mu - math.sqrt(config.beta) * sd, axis=1)
    centered = mu - mu.mean(axis=1, keepdims=True)
    spread = np.mean(centered * centered, axis=1)
    return lcb, spread


def evaluate_acquisition(config: AcquisitionConfig, surrogates, designs) -> np.ndarray:
    """DR-LCB value at each design row (a scalar for a single 1-D design)."""
    arr = np.asarray(designs, dtype=float)
    lcb, spread = acquisition_terms(config, surrogates, np.atleast_2d(arr))
    vals = lcb + np.sqrt(config.effective_epsilon * spread)
    return float(vals[0]) if arr.ndim == 1 else vals


@dataclass
class InnerResult:
    x: np.ndarray
    value: float
    n_probes: int
    probes: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)


class _Budgeted:
    """Counts probes and records every evaluation."""

    def __init__(self, fn, budget: int):
        self.fn = fn
        self.budget = budget
        self.xs: list = []
        self.vals: list = []

    @property
    def left(self) -> int:
        return self.budget - len(self.vals)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)[: self.left]
        if x.shape[0] == 0:
            return np.empty(0)
        v = np.asarray(self.fn(x), dtype=float)
        self.xs.extend(x)
        self.vals.extend(v)
        return v

    def result(self) -> InnerResult:
        vals = np.asarray(self.vals)
        i = int(np.argmin(vals))
        return InnerResult(np.asarray(self.xs[i]).copy(), float(vals[i]), len(vals), np.asarray(self.xs), vals)


def pattern_search(fn, space: DesignSpace, budget: int, seed: int, n_starts: int = 16,
                   initial_step: float = 0.25, min_step: float = 1e-4, starts=None) -> InnerResult:
    """Multi-start compass search in the unit box, all starts advanced in lockstep.

    Each round polls ±step along every coordinate for every live start and
    evaluates the polls as one batch. A start moves to its best improving poll,
    otherwise halves its step; it retires once the step falls below
    ``min_step`` (in units of the box width). Stops when the probe budget is
    spent or every start has retired.
    """
    if budget < 1:
        raise InvalidInputError("budget must be >= 1")
    ev = _Budgeted(lambda u: fn(space.from_unit(u)), budget)
    rng = make_rng(seed, "pattern-starts")
    u0 = rng.random((n_starts, space.dimension))
    if starts is not None and len(starts):
        u0 = np.vstack([np.clip(space.to_unit(np.atleast_2d(starts)), 0.0, 1.0), u0])[: max(n_starts, len(starts))]
    cur = u0[: ev.left].copy()
    cur_val = ev(cur)
    step = np.full(cur.shape[0], initial_step)
    d = space.dimension
    dirs = np.vstack([np.eye(d), -np.eye(d)])
    while ev.left > 0:
        live = np.flatnonzero(step >= min_step)
        if live.size == 0:
            break
        polls = np.clip(cur[live, None, :] + step[live, None, None] * dirs[None], 0.0, 1.0).reshape(-1, d)
        vals = ev(polls)
        n_done = vals.size
        full = np.full(polls.shape[0], np.inf)
        full[:n_done] = vals
        full = full.reshape(live.size, dirs.shape[0])
        polls = polls.reshape(live.size, dirs.shape[0], d)
        for row, k in enumerate(live):
            j = int(np.argmin(full[row]))
            if full[row, j] < cur_val[k]:
                cur[k] = polls[row, j]
                cur_val[k] = full[row, j]
            elif np.all(np.isfinite(full[row])):
                step[k] *= 0.5
    res = ev.result()
    res.x = space.from_unit(res.x)
    res.probes = space.from_unit(res.probes)
    return res


def inner_bayesopt(fn, space: DesignSpace, budget: int, seed: int, n_init: int | None = None,
                   n_candidates: int = 512, beta: float = 2.0) -> InnerResult:
    """Small BO loop over the design box: GP on probed acquisition values, LCB over random candidates."""
    from .surrogate.regression import KernelSearch, fit_regressor

    if budget < 1:
        raise InvalidInputError("budget must be >= 1")
    ev = _Budgeted(lambda u: fn(space.from_unit(u)), budget)
    rng = make_rng(seed, "inner-bo")
    d = space.dimension
    n_init = min(budget, n_init or max(2, 4 * d))
    ev(rng.random((n_init, d)))
    search = KernelSearch(n_starts=1, max_iter=50)
    while ev.left > 0:
        x = np.asarray(ev.xs)
        y = np.asarray(ev.vals)
        gp = fit_regressor(x, y, search, seed)
        cand = rng.random((n_candidates, d))
        best = x[np.argmin(y)]
        local = np.clip(best + 0.05 * rng.standard_normal((n_candidates // 4, d)), 0.0, 1.0)
        cand = np.vstack([cand, local])
        mu, sd = gp.predict(cand)
        ev(cand[np.argmin(mu - math.sqrt(beta) * sd)])
    res = ev.result()
    res.x = space.from_unit(res.x)
    res.probes = space.from_unit(res.probes)
    return res


def minimize_acquisition(config: AcquisitionConfig, surrogates, space: DesignSpace, inner_budget: int,
                         seed: int, optimizer: str = "pattern", n_starts: int = 16, starts=None) -> InnerResult:
    """Best design found for the DR-LCB acquisition within ``inner_budget`` probes."""
    fn = lambda x: evaluate_acquisition(config, surrogates, x)  # noqa: E731
    if optimizer == "pattern":
        return pattern_search(fn, space, inner_budget, seed, n_starts=n_starts, starts=starts)
    if optimizer == "bo":
        return inner_bayesopt(fn, space, inner_budget, seed)
    raise InvalidInputError(f"unknown inner optimizer {optimizer!r}")
