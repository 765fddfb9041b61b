import numpy as np
import pytest

from drbo.core import (
    Dataset,
    DesignSpace,
    FunctionOracle,
    InvalidInputError,
    OracleOutput,
    ProblemSpec,
    indicator,
    indicator_array,
    penalized_cost,
)


def test_penalized_cost_examples():
    assert penalized_cost(OracleOutput(0.21, (-1.0, -0.5)), 10) == 0.21
    assert penalized_cost(OracleOutput(0.21, (-1.0, 0.5)), 10) == pytest.approx(10.21)
    assert penalized_cost(OracleOutput(5.0, (0.3,)), 0) == 5.0


def test_boundary_margin_is_feasible():
    out = OracleOutput(1.0, (0.0, -2.0))
    assert out.feasible
    assert indicator(out) == 0


def test_no_constraints_always_feasible():
    assert indicator(OracleOutput(3.0)) == 0
    assert indicator_array(np.empty((4, 0))).tolist() == [0, 0, 0, 0]


def test_penalized_cost_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        penalized_cost(OracleOutput(1.0, (1.0,)), -1.0)
    with pytest.raises(InvalidInputError):
        penalized_cost(OracleOutput(float("nan"), ()), 1.0)
    with pytest.raises(InvalidInputError):
        penalized_cost(OracleOutput(1.0, (float("inf"),)), 1.0)


def test_design_space_validation():
    with pytest.raises(InvalidInputError):
        DesignSpace([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        DesignSpace([0.0], [np.inf])
    space = DesignSpace([100, 100], [300, 300])
    assert space.contains([100, 300]) and not space.contains([99.0, 200])
    u = space.uniform(np.random.default_rng(0), 1000)
    assert u.shape == (1000, 2) and all(space.contains(r) for r in u)
    np.testing.assert_allclose(space.from_unit(space.to_unit(u)), u)


def test_problem_spec_validation():
    space = DesignSpace([0.0], [1.0])
    oracle = FunctionOracle(lambda x, v: OracleOutput(x[0] + v[0], ()), 0)
    with pytest.raises(InvalidInputError):
        ProblemSpec(space, 1, oracle, -1.0)
    with pytest.raises(InvalidInputError):
        ProblemSpec(space, 1, oracle, 1.0, risk_tolerance=1.5)
    prob = ProblemSpec(space, 1, oracle, 1.0)
    assert prob.evaluate([0.5], [0.25]).objective == 0.75
    with pytest.raises(InvalidInputError):
        prob.evaluate_batch(np.zeros((2, 2)), np.zeros((2, 1)))


def test_dataset_bookkeeping():
    d = Dataset.empty(2, 1, 2, lam=3.0)
    d.append(np.zeros((3, 2)), np.ones((3, 1)), [1.0, 2.0, 3.0], [[-1, -1], [0.5, -1], [0, 0]], seeds=[1, 2, 3])
    assert len(d) == 3
    assert d.inputs.shape == (3, 3)
    assert d.infeasible.tolist() == [0, 1, 0]
    assert d.penalized.tolist() == [1.0, 5.0, 3.0]
    recs = list(d.records())
    assert recs[1].penalized_cost == 5.0 and not recs[1].output.feasible
    assert d.record_seeds == [1, 2, 3]


def test_dataset_without_constraints():
    d = Dataset.empty(1, 1, 0, lam=1.0)
    d.append(np.zeros((2, 1)), np.zeros((2, 1)), [1.0, 2.0], np.empty((2, 0)))
    d.append(np.zeros((1, 1)), np.zeros((1, 1)), [3.0], np.empty((1, 0)))
    assert len(d) == 3 and d.infeasible.sum() == 0
