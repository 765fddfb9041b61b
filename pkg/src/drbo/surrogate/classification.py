"""GP classification with a probit link and the Laplace approximation.

Labels are 0/1 with 1 meaning infeasible. Internally they are mapped to
y = ±1 so that p(y | f) = Φ(y f).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import log_ndtr, ndtr

from ..rng import make_rng
from .kernels import KernelConfig, gram_with_grads, kernel_matrix, pairwise_sqdiffs
from .regression import PREDICT_CHUNK, input_ranges

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
GRAD_TOL = 1e-6
MAX_NEWTON = 100


class ClassifierFitError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ClassifierSearch:
    family: str = "matern52"
    n_starts: int = 2
    optimize: bool = True
    max_iter: int = 60
    lengthscale_bounds: tuple = (1e-3, 1e3)
    signal_bounds: tuple = (1e-2, 1e2)
    initial: KernelConfig | None = None
    fixed: KernelConfig | None = None


def probit_derivatives(y: np.ndarray, f: np.ndarray):
    """log Φ(y f) and its first three derivatives with respect to f."""
    z = y * f
    logp = log_ndtr(z)
    r = np.exp(-0.5 * z * z - LOG_SQRT_2PI - logp)  # φ(z)/Φ(z)
    d1 = y * r
    d2 = -r * r - z * r
    dr = -z * r - r * r
    d3 = y * (-(2.0 * r + z) * dr - r)
    return logp, d1, d2, d3


@dataclass
class LaplaceState:
    f: np.ndarray
    a: np.ndarray
    sw: np.ndarray
    chol: np.ndarray
    logp: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    iterations: int
    grad_norm: float

    @property
    def log_evidence(self) -> float:
        return float(-0.5 * self.a @ self.f + self.logp.sum() - np.sum(np.log(np.diag(self.chol))))


def laplace_mode(k: np.ndarray, y: np.ndarray, f0: np.ndarray | None = None) -> LaplaceState:
    """Newton iterations for the posterior mode, with step halving on the objective."""
    n = y.size
    f = np.zeros(n) if f0 is None else np.asarray(f0, dtype=float).copy()
    a = np.zeros(n)
    if f0 is not None and np.any(f != 0):
        # recover a = K^{-1} f through a damped solve; fall back to a cold start if it fails
        try:
            c = cholesky(k + 1e-8 * np.trace(k) / n * np.eye(n), lower=True)
            a = cho_solve((c, True), f)
            f = k @ a
        except np.linalg.LinAlgError:
            f = np.zeros(n)
            a = np.zeros(n)

    def objective(a_, f_):
        return -0.5 * a_ @ f_ + log_ndtr(y * f_).sum()

    psi = objective(a, f)
    for it in range(1, MAX_NEWTON + 1):
        logp, d1, d2, d3 = probit_derivatives(y, f)
        grad = d1 - a
        gnorm = float(np.linalg.norm(grad))
        w = -d2
        sw = np.sqrt(w)
        b = np.eye(n) + sw[:, None] * k * sw[None, :]
        chol = cholesky(b, lower=True, check_finite=False)
        if gnorm <= GRAD_TOL:
            return LaplaceState(f, a, sw, chol, logp, d1, d2, d3, it - 1, gnorm)
        bb = w * f + d1
        a_new = bb - sw * cho_solve((chol, True), sw * (k @ bb), check_finite=False)
        step = a_new - a
        for _ in range(30):
            a_try = a + step
            f_try = k @ a_try
            psi_try = objective(a_try, f_try)
            if psi_try >= psi - 1e-12 * abs(psi):
                break
            step *= 0.5
        a, f, psi = a_try, f_try, psi_try
    logp, d1, d2, d3 = probit_derivatives(y, f)
    gnorm = float(np.linalg.norm(d1 - a))
    if gnorm <= GRAD_TOL:
        sw = np.sqrt(-d2)
        chol = cholesky(np.eye(n) + sw[:, None] * k * sw[None, :], lower=True)
        return LaplaceState(f, a, sw, chol, logp, d1, d2, d3, MAX_NEWTON, gnorm)
    raise ClassifierFitError(
        "Laplace Newton iterations did not converge",
        {"iterations": MAX_NEWTON, "grad_norm": gnorm, "objective": float(psi)},
    )


class GPClassifier:
    """Laplace-approximated probit GP classifier; immutable after construction."""

    def __init__(self, inputs, labels, kernel: KernelConfig, init_latent=None):
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        lab = np.asarray(labels).ravel().astype(int)
        if not np.all((lab == 0) | (lab == 1)):
            raise ValueError("labels must be 0 or 1")
        if lab.size != x.shape[0]:
            raise ValueError("inputs and labels disagree on sample count")
        self.inputs = x
        self.labels = lab
        self.kernel = kernel
        self.single_class = bool(lab.min() == lab.max())
        self.offset = x.mean(axis=0)
        self._xc = x - self.offset
        self._y = 2.0 * lab - 1.0
        k = kernel_matrix(kernel.family, self._xc, self._xc, kernel.lengthscales, kernel.signal_variance)
        self._k = k
        self.state = laplace_mode(k, self._y, init_latent)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def latent_mode(self) -> np.ndarray:
        return self.state.f

    def log_evidence(self) -> float:
        return self.state.log_evidence

    def mode_residual(self) -> float:
        """|| f - K ∇log p(y|f) || at the cached mode."""
        return float(np.linalg.norm(self.state.f - self._k @ self.state.d1))

    def _check(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=float)
        if q.ndim == 1:
            q = q[None, :]
        if q.shape[1] != self.dim:
            raise ValueError(f"query dimension {q.shape[1]} does not match model dimension {self.dim}")
        return q

    def latent_moments(self, query):
        """Mean and variance of the approximate latent posterior at each query."""
        q = self._check(query)
        kern = self.kernel
        mean = np.empty(q.shape[0])
        var = np.empty(q.shape[0])
        st = self.state
        for s in range(0, q.shape[0], PREDICT_CHUNK):
            qc = q[s : s + PREDICT_CHUNK] - self.offset
            ks = kernel_matrix(kern.family, qc, self._xc, kern.lengthscales, kern.signal_variance)
            mean[s : s + qc.shape[0]] = ks @ st.d1
            v = solve_triangular(st.chol, st.sw[:, None] * ks.T, lower=True, check_finite=False)
            var[s : s + qc.shape[0]] = kern.signal_variance - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)

    def predict_infeasibility(self, query) -> np.ndarray:
        """Probability of label 1 via Φ(mean / sqrt(1 + var))."""
        mean, var = self.latent_moments(query)
        return ndtr(mean / np.sqrt(1.0 + var))

    def hyperparameters(self) -> dict:
        return {
            **self.kernel.to_dict(),
            "single_class": self.single_class,
            "log_evidence": self.log_evidence(),
            "newton_iterations": self.state.iterations,
        }

    def with_data(self, inputs, labels, warm: bool = True) -> "GPClassifier":
        init = None
        if warm:
            n_old = self.labels.size
            n_new = np.asarray(labels).size
            if n_new >= n_old:
                init = np.r_[self.state.f, np.zeros(n_new - n_old)]
        return GPClassifier(inputs, labels, self.kernel, init)


def _neg_evidence_and_grad(theta, family, sqdiffs, y, cache):
    d = sqdiffs.shape[0]
    ls = np.exp(theta[:d])
    sf2 = math.exp(theta[d])
    k, dk = gram_with_grads(family, sqdiffs, ls, sf2)
    try:
        st = laplace_mode(k, y, cache.get("f"))
    except (ClassifierFitError, np.linalg.LinAlgError):
        return 1e25, np.zeros_like(theta)
    cache["f"] = st.f
    z = st.log_evidence
    # gradient of the Laplace evidence including the implicit dependence through the mode
    r = st.sw[:, None] * cho_solve((st.chol, True), np.diag(st.sw), check_finite=False)
    c = solve_triangular(st.chol, st.sw[:, None] * k, lower=True, check_finite=False)
    s2 = 0.5 * (np.diag(k) - np.einsum("ij,ij->j", c, c)) * st.d3
    grad = np.empty_like(theta)
    for j, cj in enumerate([*dk, k]):
        s1 = 0.5 * st.a @ cj @ st.a - 0.5 * np.sum(r * cj)
        b = cj @ st.d1
        s3 = b - k @ (r @ b)
        grad[j] = s1 + s2 @ s3
    return -z, -grad


def fit_classifier(inputs, labels, search: ClassifierSearch | None = None, seed: int = 0, init_latent=None) -> GPClassifier:
    """Fit the classifier; hyperparameters maximize the Laplace evidence.

    With a single class present the hyperparameters are not optimized (the
    evidence is unbounded in that case) and the starting kernel is used.
    """
    search = search or ClassifierSearch()
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    lab = np.asarray(labels).ravel().astype(int)
    ranges = input_ranges(x)
    start = search.fixed or search.initial or KernelConfig(search.family, tuple(0.5 * ranges), 1.0, 0.0)
    if search.fixed is not None or not search.optimize or lab.min() == lab.max():
        return GPClassifier(x, lab, start, init_latent)

    y = 2.0 * lab - 1.0
    xc = x - x.mean(axis=0)
    sqdiffs = pairwise_sqdiffs(xc)
    lo_l, hi_l = search.lengthscale_bounds
    bounds = [(math.log(lo_l * r), math.log(hi_l * r)) for r in ranges]
    bounds.append(tuple(math.log(v) for v in search.signal_bounds))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = [np.clip(np.log(np.r_[start.lengthscales, start.signal_variance]), lo, hi)]
    rng = make_rng(seed, "gpc-starts")
    for _ in range(max(0, search.n_starts - 1)):
        starts.append(
            np.clip(
                np.r_[np.log(ranges) + rng.uniform(math.log(0.05), math.log(5.0), ranges.size),
                      rng.uniform(math.log(0.3), math.log(30.0))],
                lo,
                hi,
            )
        )
    best, best_val = None, math.inf
    for th0 in starts:
        cache = {"f": init_latent}
        f0, _ = _neg_evidence_and_grad(th0, search.family, sqdiffs, y, dict(cache))
        if f0 < best_val:
            best, best_val = th0, f0
        res = minimize(
            _neg_evidence_and_grad,
            th0,
            args=(search.family, sqdiffs, y, cache),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": search.max_iter},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best, best_val = np.clip(res.x, lo, hi), float(res.fun)
    e = np.exp(best)
    kern = KernelConfig(search.family, tuple(e[:-1]), float(e[-1]), 0.0)
    return GPClassifier(x, lab, kern, init_latent)
