"""Closed-form test problems with known robust optima."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import DesignSpace, OracleOutput, ProblemSpec


@dataclass(frozen=True)
class SyntheticProblem:
    """``kind`` selects the closed form.

    quadratic      f = (x - ξ)^2, no constraints; ξ ~ N(0, sigma^2) nominally.
    linear_margin  f = 0, one constraint g = ξ - c.
    """

    kind: str = "quadratic"
    sigma: float = 1.0
    c: float = 0.0

    @property
    def n_constraints(self) -> int:
        return 1 if self.kind == "linear_margin" else 0

    def evaluate(self, designs, variations):
        x = np.asarray(designs, dtype=float)
        xi = np.asarray(variations, dtype=float)
        if self.kind == "quadratic":
            obj = np.sum((x - xi) ** 2, axis=1)
            return obj, np.empty((obj.size, 0))
        if self.kind == "linear_margin":
            return np.zeros(x.shape[0]), (xi[:, :1] - self.c)
        raise ValueError(f"unknown synthetic kind {self.kind!r}")

    def known_dr_optimum(self, epsilon: float):
        """(x*, robust value) under the nominal N(0, sigma^2), if available."""
        if self.kind == "quadratic":
            return np.zeros(1), quadratic_dr_value(0.0, self.sigma, epsilon)
        return None


def synthetic_oracle(problem: SyntheticProblem, design, variation) -> OracleOutput:
    obj, margins = problem.evaluate(np.atleast_2d(design), np.atleast_2d(variation))
    return OracleOutput(obj[0], tuple(margins[0]))


def quadratic_moments(x: float, sigma: float) -> tuple[float, float]:
    """Mean and variance of (x - ξ)^2 for ξ ~ N(0, sigma^2)."""
    s2 = sigma * sigma
    return x * x + s2, 2.0 * s2 * s2 + 4.0 * x * x * s2


def quadratic_dr_value(x: float, sigma: float, epsilon: float) -> float:
    m, v = quadratic_moments(x, sigma)
    return m + math.sqrt(epsilon * v)


def quadratic_problem(sigma: float = 1.0, lam: float = 10.0, bound: float = 2.0) -> ProblemSpec:
    return ProblemSpec(DesignSpace([-bound], [bound]), 1, SyntheticProblem("quadratic", sigma), lam, 0.05, "quadratic")


def linear_margin_problem(c: float, lam: float = 1.0) -> ProblemSpec:
    return ProblemSpec(DesignSpace([0.0], [1.0]), 1, SyntheticProblem("linear_margin", c=c), lam, 0.05, "linear_margin")
