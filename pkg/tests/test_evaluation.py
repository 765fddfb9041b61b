import math

import numpy as np
import pytest
from scipy.stats import norm

from drbo.benchmarks import linear_margin_problem, quadratic_problem
from drbo.core import DesignSpace, FunctionOracle, InvalidInputError, OracleOutput, ProblemSpec
from drbo.distributions import GaussianModel, TimeShiftFamily
from drbo.evaluation import (
    EvaluationError,
    ExperimentReport,
    evaluate_design,
    read_csv,
    run_misfit_experiment,
    run_parameter_sweep,
    run_time_shift_experiment,
    two_proportion_test,
)
from drbo.rng import make_rng
from drbo.solver import SolverConfig

STD = GaussianModel([0.0], [[1.0]])
FAST = SolverConfig(initial_samples=10, max_iterations=2, group_batch=2, L=16, inner_budget=40, inner_starts=2, gp_starts=1)


def test_constraint_free_yield_is_one():
    r = evaluate_design(quadratic_problem(), [0.3], STD, 1000, seed=1)
    assert r.yield_ == 1.0 and r.yield_stderr == 0.0 and r.violation_rates == []


def test_linear_margin_yield_matches_normal_cdf():
    c = 1.6449
    r = evaluate_design(linear_margin_problem(c), [0.5], STD, 100_000, seed=2)
    assert abs(r.yield_ - norm.cdf(c)) < 3 * r.yield_stderr
    assert r.yield_ + r.violation_rates[0] == pytest.approx(1.0, abs=1e-15)


def test_report_deterministic_and_stderr():
    p = linear_margin_problem(0.2, lam=3.0)
    a = evaluate_design(p, [0.1], STD, 2000, seed=9)
    assert a == evaluate_design(p, [0.1], STD, 2000, seed=9)
    assert a != evaluate_design(p, [0.1], STD, 2000, seed=10)
    # cost here is lam * indicator, so its stderr is lam times the yield stderr
    assert a.cost_stderr == pytest.approx(3.0 * a.yield_stderr, rel=1e-12)
    assert EvaluationReportRoundTrip(a)


def EvaluationReportRoundTrip(rep):
    from drbo.evaluation import EvaluationReport

    return EvaluationReport.from_dict(rep.to_dict()) == rep


def test_minimum_samples_and_dimension():
    with pytest.raises(InvalidInputError):
        evaluate_design(quadratic_problem(), [0.0], STD, 99)
    with pytest.raises(InvalidInputError):
        evaluate_design(quadratic_problem(), [0.0, 1.0], STD, 100)


def _flaky(threshold):
    def fn(x, xi):
        return OracleOutput(np.nan if xi[0] > threshold else xi[0])

    return ProblemSpec(DesignSpace([0.0], [1.0]), 1, FunctionOracle(fn, 0), 1.0)


def test_failures_tolerated_below_allowance():
    xi = STD.sample_rng(make_rng(0, "evaluate"), 4000)[:, 0]
    n_bad = int(np.sum(xi > 3.2))
    assert 0 < n_bad < 4
    r = evaluate_design(_flaky(3.2), [0.5], STD, 4000, seed=0)
    assert r.n_failures == n_bad and r.n_samples == 4000 - n_bad
    with pytest.raises(EvaluationError):
        evaluate_design(_flaky(1.0), [0.5], STD, 4000, seed=0)


def test_doubling_samples_consistent():
    p = linear_margin_problem(0.5, lam=2.0)
    a = evaluate_design(p, [0.2], STD, 5000, seed=1)
    b = evaluate_design(p, [0.2], STD, 10_000, seed=2)
    assert abs(a.mean_cost - b.mean_cost) <= 4 * math.hypot(a.cost_stderr, b.cost_stderr)


def test_two_proportion_test():
    same = two_proportion_test(900, 1000, 900, 1000)
    assert same["z"] == 0.0 and not same["significant"]
    diff = two_proportion_test(950, 1000, 900, 1000)
    assert diff["significant"] and diff["p_value"] < 0.05


FAMILY = TimeShiftFamily((0.0, 0.01), (1.0, 0.0), 1, (0.0, 100.0))


def test_time_shift_grid_shape_and_determinism(tmp_path):
    methods = {"DR": FAST, "LCB": SolverConfig(**{**FAST.to_dict(), "mode": "lcb"})}
    args = (linear_margin_problem(0.5), methods, FAMILY, [0, 30, 100])
    a = run_time_shift_experiment(*args, repeats=2, n_eval=200, seed=4)
    assert a.shape == (1, 2, 2, 3) and a.tests == ["t=0", "t=30", "t=100"]
    b = run_time_shift_experiment(*args, repeats=2, n_eval=200, seed=4)
    assert [c.to_dict() for c in a.cells] == [c.to_dict() for c in b.cells]
    # solver seeds are shared across methods per repeat and distinct across repeats
    assert a.cell("DR", 0).solver_seed == a.cell("LCB", 0).solver_seed != a.cell("DR", 1).solver_seed
    a.write_grid(tmp_path / "grid.jsonl")
    back = ExperimentReport.read_grid(tmp_path / "grid.jsonl")
    assert [c.to_dict() for c in back.cells] == [c.to_dict() for c in a.cells]
    paths = a.write_tables(tmp_path, reference="LCB")
    rows = read_csv(paths["summary"])
    assert len(rows) == 2 * 3 and {"cost_mean", "cost_std", "yield_mean", "yield_std"} <= set(rows[0])
    wide = read_csv(paths["table"])
    assert [r["method"] for r in wide] == ["DR", "LCB"] and "t=100:yield_mean" in wide[0]
    # aggregate std is the unbiased estimator over repeats
    costs = a.values("DR", "t=30", "mean_cost")
    agg = next(r for r in a.aggregate() if r["method"] == "DR" and r["test"] == "t=30")
    assert agg["cost_std"] == pytest.approx(np.std(costs, ddof=1), rel=1e-12)


def test_time_shift_degenerate_grid():
    rep = run_time_shift_experiment(quadratic_problem(), {"DR": FAST}, FAMILY, [0], repeats=1, n_eval=100)
    ev = rep.cell("DR", 0).evaluations["t=0"]
    assert ev.test_distribution == GaussianModel([0.0], [[1.0]]).to_config()


def test_resume_from_store(tmp_path):
    args = (quadratic_problem(), {"DR": FAST}, FAMILY, [0, 50])
    a = run_time_shift_experiment(*args, repeats=2, n_eval=100, store=tmp_path)
    files = sorted(tmp_path.glob("*.json"))
    assert len(files) == 2
    seen = []
    b = run_time_shift_experiment(*args, repeats=2, n_eval=100, store=tmp_path, progress=seen.append)
    assert seen == []
    assert [c.to_dict() for c in a.cells] == [c.to_dict() for c in b.cells]


def test_misfit_identity():
    truth = GaussianModel([0.0], [[1.0]])
    rep = run_misfit_experiment(linear_margin_problem(0.3), {"DR": FAST}, [("same", truth)], fit_sample_count=2000,
                                noise_cov=np.zeros((1, 1)), repeats=1, n_eval=20_000, seed=1)
    ev = rep.cell("DR", 0, "same").evaluations
    nom, tru = ev["nominal"], ev["true"]
    assert abs(nom.yield_ - tru.yield_) <= 3 * math.hypot(nom.yield_stderr, tru.yield_stderr)
    assert rep.meta["noise_cov"] == [[0.0]]


def test_parameter_sweep_single_cell():
    rep = run_parameter_sweep(quadratic_problem(), STD, FAST, "epsilon", [0.1], repeats=1, n_eval=100)
    assert rep.methods == ["epsilon=0.1"] and rep.shape == (1, 1, 1, 1)
    rep = run_parameter_sweep(quadratic_problem(), STD, FAST, "L", [8, 16], repeats=1, n_eval=100)
    assert rep.methods == ["L=8", "L=16"]
    with pytest.raises(InvalidInputError):
        run_parameter_sweep(quadratic_problem(), STD, FAST, "beta", [1.0], repeats=1)
