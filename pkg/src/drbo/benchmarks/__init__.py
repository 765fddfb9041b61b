"""Benchmark registry: build a ProblemSpec from a name and parameter overrides."""

from __future__ import annotations

import json
from importlib import resources

from ..core import DesignSpace, InvalidInputError, ProblemSpec
from .amp import AmpProxyConfig, amp_oracle
from .mzi import MziProxyConfig, mzi_oracle
from .synthetic import (
    SyntheticProblem,
    linear_margin_problem,
    quadratic_dr_value,
    quadratic_moments,
    quadratic_problem,
    synthetic_oracle,
)

DEFAULTS_VERSION = 1


def load_defaults() -> dict:
    """Shipped proxy constants, keyed by benchmark name."""
    text = resources.files("drbo").joinpath("data/benchmark_defaults.json").read_text()
    data = json.loads(text)
    if data.get("version") != DEFAULTS_VERSION:
        raise InvalidInputError(f"benchmark defaults version {data.get('version')} != {DEFAULTS_VERSION}")
    return data


BENCHMARKS = ("mzi", "amp", "quadratic", "linear_margin")


def _merge(name: str, params: dict | None) -> dict:
    base = dict(load_defaults()[name]["proxy"])
    for key, val in (params or {}).items():
        if key not in base:
            raise InvalidInputError(f"unknown {name} parameter {key!r}")
        base[key] = val
    return base


def build_problem(name: str, lam: float | None = None, params: dict | None = None,
                  risk_tolerance: float = 0.05) -> ProblemSpec:
    if name not in BENCHMARKS:
        raise InvalidInputError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")
    if lam is None:
        lam = load_defaults()[name]["default_lambda"]
    p = _merge(name, params)
    if name == "quadratic":
        prob = quadratic_problem(p["sigma"], lam, p["bound"])
    elif name == "linear_margin":
        prob = linear_margin_problem(p["c"], lam)
    else:
        p["bounds"] = tuple(tuple(float(v) for v in b) for b in p["bounds"])
        if name == "mzi":
            p["arm_phase_coefficients"] = tuple(p["arm_phase_coefficients"])
            cfg = MziProxyConfig(**p)
        else:
            cfg = AmpProxyConfig(**p)
        prob = ProblemSpec(DesignSpace(*cfg.bounds), 2, cfg, lam, risk_tolerance, name)
    if risk_tolerance != prob.risk_tolerance:
        prob = ProblemSpec(prob.space, prob.variation_dim, prob.oracle, lam, risk_tolerance, name)
    return prob


__all__ = [
    "AmpProxyConfig",
    "BENCHMARKS",
    "MziProxyConfig",
    "SyntheticProblem",
    "amp_oracle",
    "build_problem",
    "linear_margin_problem",
    "load_defaults",
    "mzi_oracle",
    "quadratic_dr_value",
    "quadratic_moments",
    "quadratic_problem",
    "synthetic_oracle",
]
