import math

import numpy as np
import pytest

from drbo.benchmarks import (
    AmpProxyConfig,
    MziProxyConfig,
    SyntheticProblem,
    amp_oracle,
    build_problem,
    load_defaults,
    mzi_oracle,
    quadratic_dr_value,
    quadratic_moments,
    synthetic_oracle,
)
from drbo.core import InvalidInputError
from drbo.distributions import GaussianModel, sample


def _cross_port_reference(cfg: MziProxyConfig, g1: float, g2: float) -> np.ndarray:
    """Cross-port power by explicit 2x2 matrix products, one wavelength at a time."""
    amp = 10 ** (-cfg.arm_loss_db / 20)
    out = []
    for nu in cfg.detuning:
        phi = 2 * math.pi * nu / cfg.fsr_ghz

        def coupler(g):
            k = cfg.kappa0 * math.exp(-g / cfg.coupling_decay)
            t, s = math.sqrt(1 - k), math.sqrt(k)
            return np.array([[t, -1j * s], [-1j * s, t]])

        def arms(stage):
            h = 0.5 * (phi + cfg.arm_phase_coefficients[stage])
            return amp * np.diag([np.exp(-1j * h), np.exp(1j * h)])

        m = coupler(g2) @ arms(1) @ coupler(g1) @ arms(0) @ coupler(cfg.fixed_gap)
        out.append(abs((m @ np.array([1.0, 0.0]))[1]) ** 2)
    return np.array(out)


def test_mzi_transfer_matrix_reference():
    cfg = MziProxyConfig()
    for g in ([200.0, 200.0], [114.0, 300.0], [287.0, 133.0]):
        np.testing.assert_allclose(cfg.transmission(np.array([g]))[0], _cross_port_reference(cfg, *g), rtol=1e-12, atol=1e-15)


def test_mzi_pinned_regression():
    bw, xt, att = MziProxyConfig().metrics(np.array([[200.0, 200.0]]))
    assert bw[0] == pytest.approx(238.90765925, rel=1e-8)
    assert xt[0] == pytest.approx(-7.26759957, rel=1e-8)
    assert att[0] == pytest.approx(0.75675144, rel=1e-7)


def test_mzi_oracle_contract():
    cfg = MziProxyConfig()
    out = mzi_oracle(cfg, [200.0, 200.0], [0.0, 0.0])
    assert out == mzi_oracle(cfg, [200.0, 200.0], [0.0, 0.0])
    assert out.objective == pytest.approx(-238.90765925, rel=1e-8)
    assert out.constraint_margins[0] == pytest.approx(-7.26759957 - cfg.xt_threshold, rel=1e-8)
    with pytest.raises(InvalidInputError):
        mzi_oracle(cfg, [99.0, 200.0], [0.0, 0.0])


def test_mzi_additive_perturbation():
    cfg = MziProxyConfig()
    a = cfg.evaluate([[150.0, 220.0]], [[3.0, -2.0]])
    b = cfg.evaluate([[153.0, 218.0]], [[0.0, 0.0]])
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_mzi_grid_and_coupling():
    cfg = MziProxyConfig()
    wl = cfg.wavelength_grid
    assert wl.size >= 64 and np.all(np.diff(wl) > 0)
    g = np.linspace(100 - 15, 300 + 15, 500)
    k = cfg.kappa(g)
    assert np.all((k > 0) & (k < 1)) and np.all(np.diff(k) < 0)
    assert cfg.kappa(100) == pytest.approx(0.599, abs=2e-3) and cfg.kappa(300) == pytest.approx(0.0499, abs=1e-3)


def test_mzi_grid_refinement_stable():
    coarse, fine = MziProxyConfig(), MziProxyConfig(n_grid=512)
    x = np.random.default_rng(0).uniform(100, 300, (50, 2))
    bw0, xt0, a0 = coarse.metrics(x)
    bw1, xt1, a1 = fine.metrics(x)
    # bandwidth uses interpolated crossings; the other two are grid maxima
    assert np.max(np.abs(bw1 - bw0)) < 1.0
    assert np.max(np.abs(a1 - a0)) < 0.05
    assert np.max(np.abs(xt1 - xt0)) < 0.5


def test_mzi_continuity_in_gap():
    cfg = MziProxyConfig()
    g = np.column_stack([np.linspace(110, 130, 401), np.full(401, 290.0)])
    bw, xt, _ = cfg.metrics(g)
    assert np.max(np.abs(np.diff(bw))) < 1.0
    assert np.max(np.abs(np.diff(xt))) < 0.5


AMP_DESIGN = np.array([10.0, 40.0, 10.0, 2.0])


def test_amp_pinned_regression():
    p, gain, ugf, pm = AmpProxyConfig().performance(AMP_DESIGN[None], np.array([[0.05, -0.05]]))
    assert p[0] == pytest.approx(0.132, rel=1e-12)
    assert ugf[0] == pytest.approx(math.sqrt(60000) / (2 * math.pi * 0.16), rel=1e-12)
    assert gain[0] == pytest.approx(24.48489763, rel=1e-8)
    assert pm[0] == pytest.approx(67.43299092, rel=1e-8)


def test_amp_matched_pair_is_best_and_symmetric():
    cfg = AmpProxyConfig()
    rng = np.random.default_rng(0)
    lo, hi = map(np.asarray, cfg.bounds)
    for _ in range(20):
        x = rng.uniform(lo, hi)[None]
        e = rng.uniform(-0.1, 0.1, 2)
        g0 = cfg.performance(x, np.zeros((1, 2)))[1][0]
        gains = [cfg.performance(x, (s * e)[None])[1][0] for s in (np.array([1, 1]), np.array([-1, 1]), np.array([1, -1]), np.array([-1, -1]))]
        assert max(gains) <= g0
        np.testing.assert_allclose(gains, gains[0], rtol=1e-13)


def test_amp_power_increasing_in_widths():
    cfg = AmpProxyConfig()
    rng = np.random.default_rng(1)
    lo, hi = map(np.asarray, cfg.bounds)
    for _ in range(20):
        x = rng.uniform(lo, hi)
        p0 = cfg.performance(x[None], np.zeros((1, 2)))[0][0]
        for j in range(3):
            y = x.copy()
            y[j] += 0.5
            assert cfg.performance(y[None], np.zeros((1, 2)))[0][0] > p0


def test_amp_outputs_finite_on_box():
    cfg = AmpProxyConfig()
    rng = np.random.default_rng(2)
    lo, hi = map(np.asarray, cfg.bounds)
    x = rng.uniform(lo, hi, (2000, 4))
    corners = np.array(np.meshgrid(*zip(lo, hi))).reshape(4, -1).T
    x = np.vstack([x, corners])
    e = rng.uniform(-0.1, 0.1, (x.shape[0], 2))
    obj, margins = cfg.evaluate(x, e)
    assert np.all(np.isfinite(obj)) and np.all(np.isfinite(margins))
    out = amp_oracle(cfg, AMP_DESIGN, [0.0, 0.0])
    assert out == amp_oracle(cfg, AMP_DESIGN, [0.0, 0.0])
    with pytest.raises(InvalidInputError):
        amp_oracle(cfg, AMP_DESIGN, [0.6, 0.0])
    with pytest.raises(InvalidInputError):
        amp_oracle(cfg, [1.0, 40.0, 10.0, 2.0], [0.0, 0.0])


def test_quadratic_closed_forms():
    sp = SyntheticProblem("quadratic", sigma=1.0)
    assert synthetic_oracle(sp, [0.7], [0.7]).objective == 0.0
    assert synthetic_oracle(sp, [0.7], [0.2]).feasible
    assert quadratic_dr_value(0.0, 1.0, 0.25) == pytest.approx(1 + math.sqrt(0.5))
    n = 100_000
    for x in (0.0, 0.8):
        xi = sample(GaussianModel([0.0], [[1.0]]), n, seed=3)
        f = sp.evaluate(np.full((n, 1), x), xi)[0]
        m, v = quadratic_moments(x, 1.0)
        assert abs(f.mean() - m) < 3 * f.std() / math.sqrt(n)
        # standard error of the sample variance uses the fourth central moment
        se_v = math.sqrt((np.mean((f - f.mean()) ** 4) - f.var() ** 2) / n)
        assert abs(f.var() - v) < 3 * se_v


def test_build_problem_defaults_and_overrides():
    d = load_defaults()
    p = build_problem("mzi")
    assert p.lam == d["mzi"]["default_lambda"] and p.design_dim == 2 and p.variation_dim == 2
    p = build_problem("amp", lam=2.0, params={"gain_min": 25.0})
    assert p.lam == 2.0 and p.oracle.gain_min == 25.0 and p.oracle.n_constraints == 3
    with pytest.raises(InvalidInputError):
        build_problem("amp", params={"no_such_key": 1})
    with pytest.raises(InvalidInputError):
        build_problem("nope")
