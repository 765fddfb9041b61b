"""Zero-mean GP regression with Cholesky caching and marginal-likelihood fitting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from ..rng import make_rng
from .kernels import KernelConfig, gram_with_grads, kernel_matrix, pairwise_sqdiffs

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
JITTER_MAX = 1e-4
PREDICT_CHUNK = 4096


class IllConditionedError(RuntimeError):
    """Gram matrix could not be factorized even with the maximum jitter."""


@dataclass(frozen=True)
class KernelSearch:
    """How hyperparameters are chosen.

    Bounds are multipliers: lengthscales relative to each input column's
    range; signal and noise variance relative to the (standardized, hence
    unit) target variance. ``initial`` warm-starts the first local search;
    ``fixed`` skips optimization entirely.
    """

    family: str = "matern52"
    n_starts: int = 5
    optimize: bool = True
    max_iter: int = 200
    lengthscale_bounds: tuple = (1e-3, 1e3)
    signal_bounds: tuple = (1e-6, 1e6)
    noise_bounds: tuple = (1e-8, 1.0)
    standardize: bool = True
    initial: KernelConfig | None = None
    fixed: KernelConfig | None = None


def cholesky_with_jitter(k: np.ndarray, signal_variance: float):
    """Lower Cholesky factor of ``k``, escalating diagonal jitter x10 from 1e-10 to 1e-4 (relative)."""
    try:
        return cholesky(k, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    jitter = JITTER_START * signal_variance
    eye = np.eye(k.shape[0])
    while jitter <= JITTER_MAX * signal_variance * (1 + 1e-12):
        try:
            return cholesky(k + jitter * eye, lower=True, check_finite=False), jitter
        except LinAlgError:
            jitter *= 10.0
    raise IllConditionedError(f"Gram matrix not positive definite with jitter up to {JITTER_MAX:g}·signal variance")


def input_ranges(x: np.ndarray) -> np.ndarray:
    rng = np.ptp(x, axis=0)
    return np.where(rng > 0, rng, 1.0)


class GPRegressor:
    """Trained GP; immutable after construction.

    Targets are standardized internally (``kernel`` is in standardized units)
    and predictions are returned in the original units. The latent function
    (noise-free) posterior is reported.
    """

    def __init__(self, inputs, targets, kernel: KernelConfig, standardize: bool = True):
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(targets, dtype=float).ravel()
        if x.shape[0] != y.size:
            raise ValueError("inputs and targets disagree on sample count")
        if kernel.dim != x.shape[1]:
            raise ValueError(f"kernel has {kernel.dim} lengthscales for {x.shape[1]}-D inputs")
        self.inputs = x
        self.targets = y
        self.kernel = kernel
        self.standardize = standardize
        self.offset = x.mean(axis=0)
        if standardize:
            self.y_mean = float(y.mean())
            sd = float(y.std())
            self.y_scale = sd if sd > 1e-12 * max(1.0, abs(self.y_mean)) else 1.0
        else:
            self.y_mean, self.y_scale = 0.0, 1.0
        self._xc = x - self.offset
        self._ys = (y - self.y_mean) / self.y_scale
        k = kernel_matrix(kernel.family, self._xc, self._xc, kernel.lengthscales, kernel.signal_variance)
        k[np.diag_indices_from(k)] += kernel.noise_variance
        self.chol, self.jitter = cholesky_with_jitter(k, kernel.signal_variance)
        self.alpha = cho_solve((self.chol, True), self._ys, check_finite=False)

    @property
    def n(self) -> int:
        return self.targets.size

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def prior_variance(self) -> float:
        """k(θ, θ) in target units."""
        return self.kernel.signal_variance * self.y_scale**2

    def log_marginal_likelihood(self) -> float:
        """Log evidence of the standardized targets."""
        return float(
            -0.5 * self._ys @ self.alpha - np.sum(np.log(np.diag(self.chol))) - 0.5 * self.n * LOG_2PI
        )

    def _check(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=float)
        if q.ndim == 1:
            q = q[None, :]
        if q.shape[1] != self.dim:
            raise ValueError(f"query dimension {q.shape[1]} does not match model dimension {self.dim}")
        return q

    def predict(self, query, return_var: bool = False):
        """Posterior mean and std (or variance) at each query row."""
        q = self._check(query)
        mean = np.empty(q.shape[0])
        var = np.empty(q.shape[0])
        kern = self.kernel
        for s in range(0, q.shape[0], PREDICT_CHUNK):
            qc = q[s : s + PREDICT_CHUNK] - self.offset
            ks = kernel_matrix(kern.family, qc, self._xc, kern.lengthscales, kern.signal_variance)
            mean[s : s + qc.shape[0]] = ks @ self.alpha
            v = solve_triangular(self.chol, ks.T, lower=True, check_finite=False)
            var[s : s + qc.shape[0]] = kern.signal_variance - np.einsum("ij,ij->j", v, v)
        np.maximum(var, 0.0, out=var)
        mean = self.y_mean + self.y_scale * mean
        var = var * self.y_scale**2
        if return_var:
            return mean, var
        return mean, np.sqrt(var)

    def predict_mean(self, query) -> np.ndarray:
        q = self._check(query) - self.offset
        kern = self.kernel
        out = np.empty(q.shape[0])
        for s in range(0, q.shape[0], PREDICT_CHUNK):
            ks = kernel_matrix(kern.family, q[s : s + PREDICT_CHUNK], self._xc, kern.lengthscales, kern.signal_variance)
            out[s : s + ks.shape[0]] = ks @ self.alpha
        return self.y_mean + self.y_scale * out

    def hyperparameters(self) -> dict:
        return {
            **self.kernel.to_dict(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "jitter": self.jitter,
            "log_marginal_likelihood": self.log_marginal_likelihood(),
        }

    def with_data(self, inputs, targets) -> "GPRegressor":
        """Same hyperparameters, new data (no re-optimization)."""
        return GPRegressor(inputs, targets, self.kernel, self.standardize)


def _pack(kernel: KernelConfig) -> np.ndarray:
    return np.log(np.r_[kernel.lengthscales, kernel.signal_variance, kernel.noise_variance])


def _unpack(theta: np.ndarray, family: str) -> KernelConfig:
    e = np.exp(theta)
    return KernelConfig(family, tuple(e[:-2]), float(e[-2]), float(e[-1]))


def negative_lml_and_grad(theta: np.ndarray, family: str, sqdiffs: np.ndarray, y: np.ndarray):
    """Negative log marginal likelihood and its gradient in log-parameter space."""
    n = y.size
    d = sqdiffs.shape[0]
    ls = np.exp(theta[:d])
    sf2 = math.exp(theta[d])
    sn2 = math.exp(theta[d + 1])
    k, dk = gram_with_grads(family, sqdiffs, ls, sf2)
    kn = k.copy()
    kn[np.diag_indices(n)] += sn2
    try:
        chol, _ = cholesky_with_jitter(kn, sf2)
    except IllConditionedError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((chol, True), y, check_finite=False)
    nlml = 0.5 * y @ alpha + np.sum(np.log(np.diag(chol))) + 0.5 * n * LOG_2PI
    kinv = cho_solve((chol, True), np.eye(n), check_finite=False)
    w = np.outer(alpha, alpha) - kinv
    grad = np.empty_like(theta)
    for j in range(d):
        grad[j] = 0.5 * np.sum(w * dk[j])
    grad[d] = 0.5 * np.sum(w * k)
    grad[d + 1] = 0.5 * sn2 * np.trace(w)
    return float(nlml), -grad


def _bounds(search: KernelSearch, ranges: np.ndarray) -> list:
    lo, hi = search.lengthscale_bounds
    b = [(math.log(lo * r), math.log(hi * r)) for r in ranges]
    b.append(tuple(math.log(v) for v in search.signal_bounds))
    b.append(tuple(math.log(v) for v in search.noise_bounds))
    return b


def _default_start(family: str, ranges: np.ndarray) -> KernelConfig:
    return KernelConfig(family, tuple(0.5 * ranges), 1.0, 1e-3)


def fit_regressor(inputs, targets, search: KernelSearch | None = None, seed: int = 0) -> GPRegressor:
    """Fit a GP, choosing hyperparameters by multi-start L-BFGS-B on the log evidence.

    Start 0 is ``search.initial`` (or a range-based default); the remaining
    ``n_starts - 1`` starts are drawn log-uniformly around plausible values
    from the stream ``(seed, "gp-starts")``. The best evidence over all
    starting points and local optima wins, so the result never scores below
    the first start.
    """
    search = search or KernelSearch()
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("need at least 2 samples")
    if search.fixed is not None or not search.optimize:
        kern = search.fixed or search.initial or _default_start(search.family, input_ranges(x))
        return GPRegressor(x, y, kern, search.standardize)

    ranges = input_ranges(x)
    if search.standardize:
        ym, sd = float(y.mean()), float(y.std())
        sd = sd if sd > 1e-12 * max(1.0, abs(ym)) else 1.0
        ys = (y - ym) / sd
    else:
        ys = y
    xc = x - x.mean(axis=0)
    sqdiffs = pairwise_sqdiffs(xc)
    bounds = _bounds(search, ranges)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    start0 = search.initial if search.initial is not None else _default_start(search.family, ranges)
    starts = [np.clip(_pack(start0), lo, hi)]
    rng = make_rng(seed, "gp-starts")
    for _ in range(max(0, search.n_starts - 1)):
        th = np.r_[
            np.log(ranges) + rng.uniform(math.log(0.05), math.log(5.0), ranges.size),
            rng.uniform(math.log(0.1), math.log(10.0)),
            rng.uniform(math.log(1e-6), math.log(1e-1)),
        ]
        starts.append(np.clip(th, lo, hi))

    best_theta, best_val = None, math.inf
    for th0 in starts:
        f0, _ = negative_lml_and_grad(th0, search.family, sqdiffs, ys)
        if f0 < best_val:
            best_theta, best_val = th0, f0
        try:
            res = minimize(
                negative_lml_and_grad,
                th0,
                args=(search.family, sqdiffs, ys),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": search.max_iter},
            )
        except (ValueError, FloatingPointError) as exc:  # pragma: no cover - defensive
            log.debug("hyperparameter search from %s failed: %s", th0, exc)
            continue
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = np.clip(res.x, lo, hi), float(res.fun)
    return GPRegressor(x, y, _unpack(best_theta, search.family), search.standardize)


def dense_posterior(inputs, targets, kernel: KernelConfig, query, standardize: bool = True):
    """Reference implementation through an explicit matrix inverse (for cross-checking)."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    ym, sd = (float(y.mean()), float(y.std())) if standardize else (0.0, 1.0)
    if standardize and not sd > 1e-12 * max(1.0, abs(ym)):
        sd = 1.0
    ys = (y - ym) / sd
    q = np.atleast_2d(np.asarray(query, dtype=float))
    k = kernel_matrix(kernel.family, x, x, kernel.lengthscales, kernel.signal_variance)
    k += kernel.noise_variance * np.eye(y.size)
    kinv = np.linalg.inv(k)
    ks = kernel_matrix(kernel.family, q, x, kernel.lengthscales, kernel.signal_variance)
    mean = ks @ kinv @ ys
    var = kernel.signal_variance - np.sum((ks @ kinv) * ks, axis=1)
    _, logdet = np.linalg.slogdet(k)
    lml = -0.5 * ys @ kinv @ ys - 0.5 * logdet - 0.5 * y.size * LOG_2PI
    return ym + sd * mean, np.maximum(var, 0.0) * sd**2, float(lml)


def refit(model: GPRegressor, inputs, targets, search: KernelSearch, seed: int, optimize: bool) -> GPRegressor:
    """Refit on new data, warm-started from ``model``'s hyperparameters."""
    if not optimize:
        return model.with_data(inputs, targets)
    return fit_regressor(inputs, targets, replace(search, initial=model.kernel, n_starts=1), seed)


__all__ = [
    "GPRegressor",
    "IllConditionedError",
    "KernelSearch",
    "dense_posterior",
    "fit_regressor",
    "negative_lml_and_grad",
    "refit",
]
