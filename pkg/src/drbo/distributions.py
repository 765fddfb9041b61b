"""Variation-distribution models, shift families, χ² divergence and nominal fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.special import logsumexp

from .core import InvalidInputError
from .rng import make_rng

LOG_2PI = math.log(2.0 * math.pi)


class FactorizationError(InvalidInputError):
    """Covariance matrix is not positive definite."""


class UnderdeterminedError(InvalidInputError):
    pass


class AbsoluteContinuityError(InvalidInputError):
    """p puts mass where p0 has none."""


class DivergenceEstimationError(RuntimeError):
    """The χ² integrand is not integrable or the estimate blew up."""


def _as_points(points, dim: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1) if pts.size == dim else pts.reshape(-1, 1)
    if pts.shape[-1] != dim:
        raise InvalidInputError(f"dimension mismatch: expected {dim}, got {pts.shape[-1]}")
    return pts


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float)).copy()
        d = mean.size
        if cov.shape != (d, d):
            raise InvalidInputError(f"covariance shape {cov.shape} does not match mean length {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidInputError("Gaussian parameters must be finite")
        if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise InvalidInputError("covariance must be symmetric")
        try:
            chol = cholesky(cov, lower=True)
        except LinAlgError as exc:
            raise FactorizationError("covariance is not positive definite") from exc
        for arr in (mean, cov, chol):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dimension(self) -> int:
        return int(self.mean.size)

    @property
    def cholesky(self) -> np.ndarray:
        return self._chol

    def sample(self, count: int, seed: int) -> np.ndarray:
        return self.sample_rng(make_rng(seed, "sample"), count)

    def sample_rng(self, rng: np.random.Generator, count: int) -> np.ndarray:
        z = rng.standard_normal((count, self.dimension))
        return self.mean + z @ self._chol.T

    def logpdf(self, points) -> np.ndarray:
        x = _as_points(points, self.dimension) - self.mean
        w = solve_triangular(self._chol, x.T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return -0.5 * (np.sum(w * w, axis=0) + logdet + self.dimension * LOG_2PI)

    def pdf(self, points) -> np.ndarray:
        return np.exp(self.logpdf(points))

    def to_config(self) -> dict:
        return {"kind": "gaussian", "mean": self.mean.tolist(), "covariance": self.covariance.tolist()}

    def __eq__(self, other):
        if not isinstance(other, GaussianModel):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.covariance, other.covariance)

    def __hash__(self):
        return hash((self.mean.tobytes(), self.covariance.tobytes()))


@dataclass(frozen=True)
class MixtureModel:
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float)).copy()
        comps = tuple(self.components)
        if w.size != len(comps) or w.size == 0:
            raise InvalidInputError("need one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError("mixture weights must be nonnegative and sum to 1")
        dims = {c.dimension for c in comps}
        if len(dims) != 1:
            raise InvalidInputError("all components must share a dimension")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dimension(self) -> int:
        return self.components[0].dimension

    def sample(self, count: int, seed: int) -> np.ndarray:
        return self.sample_rng(make_rng(seed, "sample"), count)

    def sample_rng(self, rng: np.random.Generator, count: int) -> np.ndarray:
        idx = rng.choice(len(self.components), size=count, p=self.weights)
        z = rng.standard_normal((count, self.dimension))
        out = np.empty((count, self.dimension))
        for k, comp in enumerate(self.components):
            sel = idx == k
            out[sel] = comp.mean + z[sel] @ comp.cholesky.T
        return out

    def logpdf(self, points) -> np.ndarray:
        logs = np.stack([c.logpdf(points) for c in self.components])
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)[:, None]
        return logsumexp(logs + logw, axis=0)

    def pdf(self, points) -> np.ndarray:
        return np.exp(self.logpdf(points))

    @property
    def mean(self) -> np.ndarray:
        return sum(w * c.mean for w, c in zip(self.weights, self.components))

    @property
    def covariance(self) -> np.ndarray:
        m = self.mean
        return sum(
            w * (c.covariance + np.outer(c.mean - m, c.mean - m)) for w, c in zip(self.weights, self.components)
        )

    def to_config(self) -> dict:
        return {
            "kind": "mixture",
            "weights": self.weights.tolist(),
            "components": [c.to_config() for c in self.components],
        }

    def __eq__(self, other):
        if not isinstance(other, MixtureModel):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and self.components == other.components

    def __hash__(self):
        return hash((self.weights.tobytes(), self.components))


DistributionModel = Union[GaussianModel, MixtureModel]


@dataclass(frozen=True)
class TimeShiftFamily:
    """Independent identical per-dimension Gaussians with mean and std linear in t.

    mean(t) = mean_coef[0] + mean_coef[1]*t, std(t) = std_coef[0] + std_coef[1]*t.
    """

    mean_coef: tuple
    std_coef: tuple
    dimension: int
    t_range: tuple = (0.0, 100.0)

    def __post_init__(self):
        object.__setattr__(self, "mean_coef", tuple(float(c) for c in self.mean_coef))
        object.__setattr__(self, "std_coef", tuple(float(c) for c in self.std_coef))
        object.__setattr__(self, "t_range", tuple(float(c) for c in self.t_range))
        if len(self.mean_coef) != 2 or len(self.std_coef) != 2:
            raise InvalidInputError("time-shift coefficients are (intercept, slope) pairs")
        if self.dimension < 1:
            raise InvalidInputError("dimension must be positive")
        lo, hi = self.t_range
        if lo > hi:
            raise InvalidInputError("t_range must be ordered")
        if min(self.std(lo), self.std(hi)) <= 0:
            raise InvalidInputError("std(t) must stay positive over t_range")

    def mean(self, t: float) -> float:
        return self.mean_coef[0] + self.mean_coef[1] * t

    def std(self, t: float) -> float:
        return self.std_coef[0] + self.std_coef[1] * t

    def to_config(self) -> dict:
        return {
            "kind": "time_shift",
            "mean_coef": list(self.mean_coef),
            "std_coef": list(self.std_coef),
            "dimension": self.dimension,
            "t_range": list(self.t_range),
        }


def time_shift_at(family: TimeShiftFamily, t: float) -> GaussianModel:
    lo, hi = family.t_range
    if not (lo <= t <= hi):
        raise InvalidInputError(f"t={t} outside configured range {family.t_range}")
    s = family.std(t)
    if s <= 0:
        raise InvalidInputError(f"std({t}) = {s} is not positive")
    d = family.dimension
    return GaussianModel(np.full(d, family.mean(t)), np.eye(d) * s * s)


def mzi_time_shift_family(dimension: int = 2) -> TimeShiftFamily:
    """mean(t) = t/300, std(t) = 2 + 0.005 t on t in [0, 100]."""
    return TimeShiftFamily((0.0, 1.0 / 300.0), (2.0, 0.005), dimension, (0.0, 100.0))


def sample(model: DistributionModel, count: int, seed: int) -> np.ndarray:
    """``count`` i.i.d. draws as a (count, dimension) array; bitwise reproducible per seed."""
    if int(count) < 1:
        raise InvalidInputError("count must be >= 1")
    return model.sample(int(count), seed)


def density(model: DistributionModel, point) -> np.ndarray | float:
    pts = np.asarray(point, dtype=float)
    vals = model.pdf(pts)
    if pts.ndim <= 1 and vals.size == 1:
        return float(vals[0])
    return vals


def chi2_divergence_discrete(p, p0) -> float:
    """sum_i (p_i - p0_i)^2 / p0_i."""
    p = np.asarray(p, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if p.shape != p0.shape or p.ndim != 1:
        raise InvalidInputError("p and p0 must be vectors of equal length")
    if np.any(p < 0) or np.any(p0 < 0):
        raise InvalidInputError("probabilities must be nonnegative")
    if abs(p.sum() - 1) > 1e-9 or abs(p0.sum() - 1) > 1e-9:
        raise InvalidInputError("probability vectors must sum to 1")
    if np.any((p0 == 0) & (p > 0)):
        raise AbsoluteContinuityError("p is not absolutely continuous with respect to p0")
    support = p0 > 0
    return float(np.sum((p[support] - p0[support]) ** 2 / p0[support]))


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    stderr: float
    method: str
    n_points: int


def _components(model: DistributionModel):
    if isinstance(model, GaussianModel):
        return [(1.0, model)]
    return [(w, c) for w, c in zip(model.weights, model.components) if w > 0]


def _check_integrable(rho: DistributionModel, rho0: DistributionModel) -> None:
    if not isinstance(rho0, GaussianModel):
        return
    p0 = np.linalg.inv(rho0.covariance)
    comps = _components(rho)
    for _, a in comps:
        for _, b in comps:
            m = np.linalg.inv(a.covariance) + np.linalg.inv(b.covariance) - p0
            if np.min(np.linalg.eigvalsh(0.5 * (m + m.T))) <= 0:
                raise DivergenceEstimationError(
                    "density ratio has heavy tails: the χ² integral diverges for this pair"
                )


def _gh_expectation_ratio(rho, rho0, n_per_dim: int) -> float:
    # sum_i w_i E_{N_i}[rho/rho0] by tensor Gauss-Hermite under each component of rho
    nodes, weights = hermgauss(n_per_dim)
    d = rho0.dimension
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=1)
    wgrid = np.meshgrid(*([weights] * d), indexing="ij")
    w = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1) / math.pi ** (d / 2)
    total = 0.0
    for alpha, comp in _components(rho):
        pts = comp.mean + math.sqrt(2.0) * z @ comp.cholesky.T
        ratio = np.exp(rho.logpdf(pts) - rho0.logpdf(pts))
        total += alpha * float(np.dot(w, ratio))
    return total


def chi2_divergence_continuous(
    rho: DistributionModel,
    rho0: DistributionModel,
    method: str = "auto",
    budget: int | None = None,
    seed: int = 0,
) -> DivergenceEstimate:
    """Estimate E_{rho0}[(drho/drho0 - 1)^2].

    ``quadrature`` integrates int rho^2/rho0 - 1 with tensor Gauss-Hermite rules
    centered on each Gaussian component of ``rho`` (``budget`` = nodes per
    dimension, default 64). ``monte-carlo`` averages (r - 1)^2 over ``budget``
    draws from rho0 (default 200000) and reports the standard error. ``auto``
    picks quadrature up to dimension 2.
    """
    if rho.dimension != rho0.dimension:
        raise InvalidInputError("distributions must share a dimension")
    if method == "auto":
        method = "quadrature" if rho0.dimension <= 2 else "monte-carlo"
    _check_integrable(rho, rho0)
    if method == "quadrature":
        n = int(budget or 64)
        fine = _gh_expectation_ratio(rho, rho0, n) - 1.0
        coarse = _gh_expectation_ratio(rho, rho0, max(2, n // 2)) - 1.0
        if not math.isfinite(fine):
            raise DivergenceEstimationError("quadrature produced a non-finite value")
        return DivergenceEstimate(max(fine, 0.0), abs(fine - coarse), "quadrature", n ** rho0.dimension)
    if method == "monte-carlo":
        n = int(budget or 200_000)
        xs = rho0.sample_rng(make_rng(seed, "chi2-mc"), n)
        terms = (np.exp(rho.logpdf(xs) - rho0.logpdf(xs)) - 1.0) ** 2
        total = float(terms.sum())
        if not math.isfinite(total):
            raise DivergenceEstimationError("Monte Carlo integrand is not finite")
        if total > 0 and terms.max() > 0.25 * total and n >= 1000:
            raise DivergenceEstimationError("running estimate dominated by a single draw (heavy ratio tail)")
        return DivergenceEstimate(total / n, float(terms.std(ddof=1) / math.sqrt(n)), "monte-carlo", n)
    raise InvalidInputError(f"unknown method {method!r}")


@dataclass(frozen=True)
class UncertaintyBall:
    """χ² ball of radius ``radius`` around the nominal ``center``; radius 0 is {center}."""

    center: object
    radius: float
    divergence_kind: str = "chi2"

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius >= 0):
            raise InvalidInputError("radius must be finite and >= 0")
        if self.divergence_kind != "chi2":
            raise InvalidInputError("only the chi2 divergence is supported")

    def contains(self, rho, **estimator) -> bool:
        """Whether the estimated divergence of ``rho`` from the center is within the radius."""
        if self.radius == 0:
            return rho == self.center
        return chi2_divergence_continuous(rho, self.center, **estimator).value <= self.radius


def fit_gaussian(samples) -> GaussianModel:
    """Maximum-likelihood Gaussian (covariance divided by N).

    Rows are sorted before summation so the result does not depend on sample
    order. A diagonal jitter starting at 1e-10 is added when the MLE
    covariance is singular.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < max(d, 2):
        raise UnderdeterminedError(f"need at least {max(d, 2)} samples to fit a {d}-D Gaussian, got {n}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("samples must be finite")
    x = x[np.lexsort(x.T[::-1])]
    mean = x.sum(axis=0) / n
    c = x - mean
    cov = c.T @ c / n
    cov = 0.5 * (cov + cov.T)
    jitter = 1e-10
    model = None
    while model is None:
        try:
            model = GaussianModel(mean, cov)
        except FactorizationError:
            cov = cov + jitter * np.eye(d)
            jitter *= 10.0
            if jitter > 1e3:
                raise
    return model


def add_noise(samples, noise_cov, seed: int) -> np.ndarray:
    """Perturb every row by an independent N(0, noise_cov) draw.

    ``noise_cov`` may be singular (a zero matrix leaves the samples unchanged)
    but must be symmetric positive semidefinite.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    d = x.shape[1]
    if cov.shape != (d, d):
        raise InvalidInputError("noise covariance dimension does not match the samples")
    if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
        raise InvalidInputError("noise covariance must be symmetric")
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() < -1e-12 * max(1.0, abs(evals.max())):
        raise InvalidInputError("noise covariance must be positive semidefinite")
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    z = make_rng(seed, "noise").standard_normal(x.shape)
    return x + z @ root.T


def distribution_from_config(cfg: dict) -> DistributionModel:
    kind = cfg.get("kind")
    if kind == "gaussian":
        _only(cfg, {"kind", "mean", "covariance"})
        return GaussianModel(cfg["mean"], cfg["covariance"])
    if kind == "mixture":
        _only(cfg, {"kind", "weights", "components"})
        return MixtureModel(cfg["weights"], tuple(distribution_from_config(c) for c in cfg["components"]))
    if kind == "time_shift_at":
        _only(cfg, {"kind", "family", "t"})
        return time_shift_at(family_from_config(cfg["family"]), float(cfg["t"]))
    raise InvalidInputError(f"unknown distribution kind {kind!r}")


def family_from_config(cfg: dict) -> TimeShiftFamily:
    _only(cfg, {"kind", "mean_coef", "std_coef", "dimension", "t_range"})
    if cfg.get("kind", "time_shift") != "time_shift":
        raise InvalidInputError("expected kind 'time_shift'")
    return TimeShiftFamily(
        tuple(cfg["mean_coef"]), tuple(cfg["std_coef"]), int(cfg["dimension"]), tuple(cfg.get("t_range", (0.0, 100.0)))
    )


def _only(cfg: dict, allowed: set) -> None:
    extra = set(cfg) - allowed
    if extra:
        raise InvalidInputError(f"unknown keys in distribution config: {sorted(extra)}")


def amp_mismatch_gmm(alpha1: float) -> MixtureModel:
    """Two-component mixture with means ±[0.008, 0.008] and shared covariance 1e-2·[[0.8, 0.1], [0.1, 0.8]]."""
    cov = 1e-2 * np.array([[0.8, 0.1], [0.1, 0.8]])
    mu = np.array([0.008, 0.008])
    return MixtureModel(np.array([alpha1, 1.0 - alpha1]), (GaussianModel(mu, cov), GaussianModel(-mu, cov)))
