"""Stationary ARD kernels (Matern 5/2, Matern 3/2, squared exponential)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FAMILIES = ("matern52", "matern32", "se")
SQRT3 = math.sqrt(3.0)
SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class KernelConfig:
    family: str
    lengthscales: tuple
    signal_variance: float
    noise_variance: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        ls = tuple(float(v) for v in np.ravel(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not ls or min(ls) <= 0:
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "lengthscales": list(self.lengthscales),
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelConfig":
        return cls(d["family"], tuple(d["lengthscales"]), d["signal_variance"], d.get("noise_variance", 0.0))


def _profile(family: str, r2: np.ndarray) -> np.ndarray:
    """Unit-variance correlation as a function of squared scaled distance."""
    if family == "se":
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    if family == "matern52":
        s = SQRT5 * r
        return (1.0 + s + s * s / 3.0) * np.exp(-s)
    s = SQRT3 * r
    return (1.0 + s) * np.exp(-s)


def _profile_grad_factor(family: str, r2: np.ndarray) -> np.ndarray:
    """g(r) such that d k / d log(lengthscale_d) = sf2 * g(r) * (delta_d / l_d)^2."""
    if family == "se":
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    if family == "matern52":
        s = SQRT5 * r
        return (5.0 / 3.0) * (1.0 + s) * np.exp(-s)
    return 3.0 * np.exp(-SQRT3 * r)


def cross_sqdist(a: np.ndarray, b: np.ndarray, lengthscales) -> np.ndarray:
    """Squared scaled distances between rows of ``a`` and ``b``."""
    ls = np.asarray(lengthscales, dtype=float)
    a = a / ls
    b = b / ls
    r2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(r2, 0.0, out=r2)
    return r2


def kernel_matrix(family: str, a: np.ndarray, b: np.ndarray, lengthscales, signal_variance: float) -> np.ndarray:
    return signal_variance * _profile(family, cross_sqdist(a, b, lengthscales))


def pairwise_sqdiffs(x: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (D, N, N); exact (no expansion)."""
    return np.stack([(x[:, d, None] - x[None, :, d]) ** 2 for d in range(x.shape[1])])


def gram_with_grads(family: str, sqdiffs: np.ndarray, lengthscales, signal_variance: float):
    """Gram matrix and its derivatives w.r.t. log-lengthscales (list of (N, N))."""
    ls2 = np.asarray(lengthscales, dtype=float) ** 2
    scaled = sqdiffs / ls2[:, None, None]
    r2 = scaled.sum(axis=0)
    k = signal_variance * _profile(family, r2)
    g = signal_variance * _profile_grad_factor(family, r2)
    return k, [g * scaled[d] for d in range(scaled.shape[0])]


def gram(family: str, sqdiffs: np.ndarray, lengthscales, signal_variance: float) -> np.ndarray:
    ls2 = np.asarray(lengthscales, dtype=float) ** 2
    r2 = (sqdiffs / ls2[:, None, None]).sum(axis=0)
    return signal_variance * _profile(family, r2)
