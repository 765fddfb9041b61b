"""Problem definition, sample bookkeeping and the penalized cost."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised when numeric inputs are malformed (non-finite, wrong shape, out of range)."""


class OracleError(RuntimeError):
    """An oracle evaluation failed; carries the offending (design, variation) pair."""

    def __init__(self, message: str, design=None, variation=None):
        super().__init__(message)
        self.design = None if design is None else np.asarray(design, dtype=float)
        self.variation = None if variation is None else np.asarray(variation, dtype=float)


@dataclass(frozen=True)
class DesignSpace:
    """Axis-aligned box of admissible designs."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise InvalidInputError("bounds must be equal-length non-empty vectors")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidInputError("bounds must be finite")
        if np.any(lower >= upper):
            raise InvalidInputError("every lower bound must be strictly below its upper bound")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dimension(self) -> int:
        return int(self.lower.size)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def uniform(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` designs uniformly from the box, shape (count, dimension)."""
        u = rng.random((count, self.dimension))
        return self.lower + u * self.width

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.width

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.width

    def to_config(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class OracleOutput:
    """Objective value plus constraint margins; a margin > 0 is a violation."""

    objective: float
    constraint_margins: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "objective", float(self.objective))
        object.__setattr__(
            self, "constraint_margins", tuple(float(g) for g in np.ravel(self.constraint_margins))
        )

    @property
    def feasible(self) -> bool:
        # g_k = 0 counts as satisfied
        return all(g <= 0.0 for g in self.constraint_margins)

    def is_finite(self) -> bool:
        return math.isfinite(self.objective) and all(math.isfinite(g) for g in self.constraint_margins)


def _check_finite(output: OracleOutput) -> None:
    if not output.is_finite():
        raise InvalidInputError(f"oracle output is not finite: {output}")


def indicator(output: OracleOutput) -> int:
    """Risk-violation indicator: 0 when every constraint margin is <= 0, else 1."""
    _check_finite(output)
    return 0 if output.feasible else 1


def penalized_cost(output: OracleOutput, lam: float) -> float:
    """Objective plus ``lam`` times the violation indicator."""
    if not (math.isfinite(lam) and lam >= 0.0):
        raise InvalidInputError(f"penalty weight must be finite and >= 0, got {lam}")
    return output.objective + lam * indicator(output)


def indicator_array(margins: np.ndarray) -> np.ndarray:
    """Vectorized indicator over an (n, k) margin array; k = 0 means no constraints."""
    margins = np.asarray(margins, dtype=float)
    if margins.ndim == 1:
        margins = margins[:, None]
    if margins.shape[1] == 0:
        return np.zeros(margins.shape[0], dtype=int)
    return np.any(margins > 0.0, axis=1).astype(int)


class Oracle(Protocol):
    """A deterministic simulator.

    ``evaluate`` is the batched entry point: designs (n, d) and variations
    (n, m) map to objectives (n,) and margins (n, k).
    """

    n_constraints: int

    def evaluate(self, designs: np.ndarray, variations: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class ProblemSpec:
    space: DesignSpace
    variation_dim: int
    oracle: Oracle
    lam: float
    risk_tolerance: float = 0.05
    name: str = "problem"

    def __post_init__(self):
        if int(self.variation_dim) < 1:
            raise InvalidInputError("variation_dim must be positive")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InvalidInputError("lambda must be finite and >= 0")
        if not (0.0 <= self.risk_tolerance <= 1.0):
            raise InvalidInputError("risk_tolerance must lie in [0, 1]")

    @property
    def design_dim(self) -> int:
        return self.space.dimension

    @property
    def joint_dim(self) -> int:
        return self.space.dimension + self.variation_dim

    def evaluate_batch(self, designs, variations) -> tuple[np.ndarray, np.ndarray]:
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        variations = np.atleast_2d(np.asarray(variations, dtype=float))
        if designs.shape[1] != self.design_dim or variations.shape[1] != self.variation_dim:
            raise InvalidInputError(
                f"expected designs (*, {self.design_dim}) and variations (*, {self.variation_dim}), "
                f"got {designs.shape} and {variations.shape}"
            )
        if designs.shape[0] != variations.shape[0]:
            raise InvalidInputError("designs and variations must have the same number of rows")
        obj, margins = self.oracle.evaluate(designs, variations)
        obj = np.asarray(obj, dtype=float).reshape(-1)
        margins = np.asarray(margins, dtype=float).reshape(obj.size, -1)
        return obj, margins

    def evaluate(self, design, variation) -> OracleOutput:
        obj, margins = self.evaluate_batch(design, variation)
        return OracleOutput(obj[0], tuple(margins[0]))

    def penalized(self, objectives: np.ndarray, margins: np.ndarray) -> np.ndarray:
        return np.asarray(objectives, dtype=float) + self.lam * indicator_array(margins)


@dataclass(frozen=True)
class SampleRecord:
    design: np.ndarray
    variation: np.ndarray
    output: OracleOutput
    penalized_cost: float


@dataclass
class Dataset:
    """Column store of simulated (design, variation, output) triples."""

    designs: np.ndarray
    variations: np.ndarray
    objectives: np.ndarray
    margins: np.ndarray
    lam: float
    record_seeds: list = field(default_factory=list)

    @classmethod
    def empty(cls, design_dim: int, variation_dim: int, n_constraints: int, lam: float) -> "Dataset":
        return cls(
            np.empty((0, design_dim)),
            np.empty((0, variation_dim)),
            np.empty(0),
            np.empty((0, n_constraints)),
            lam,
        )

    def __len__(self) -> int:
        return int(self.objectives.size)

    def append(self, designs, variations, objectives, margins, seeds: Sequence | None = None) -> None:
        designs = np.atleast_2d(designs)
        self.designs = np.vstack([self.designs, designs])
        self.variations = np.vstack([self.variations, np.atleast_2d(variations)])
        self.objectives = np.concatenate([self.objectives, np.ravel(objectives)])
        margins = np.asarray(margins, dtype=float).reshape(designs.shape[0], self.margins.shape[1])
        self.margins = np.vstack([self.margins, margins])
        if seeds is not None:
            self.record_seeds.extend(seeds)

    @property
    def inputs(self) -> np.ndarray:
        """Joint (design, variation) rows."""
        return np.hstack([self.designs, self.variations])

    @property
    def infeasible(self) -> np.ndarray:
        return indicator_array(self.margins)

    @property
    def penalized(self) -> np.ndarray:
        return self.objectives + self.lam * self.infeasible

    def records(self) -> Iterator[SampleRecord]:
        for i in range(len(self)):
            out = OracleOutput(self.objectives[i], tuple(self.margins[i]))
            yield SampleRecord(self.designs[i].copy(), self.variations[i].copy(), out, float(self.penalized[i]))


class FunctionOracle:
    """Wrap a scalar ``f(design, variation) -> OracleOutput`` as a batched oracle."""

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], OracleOutput], n_constraints: int):
        self.fn = fn
        self.n_constraints = n_constraints

    def evaluate(self, designs, variations):
        outs = [self.fn(x, v) for x, v in zip(designs, variations)]
        obj = np.array([o.objective for o in outs])
        margins = np.array([o.constraint_margins for o in outs], dtype=float).reshape(len(outs), self.n_constraints)
        return obj, margins
