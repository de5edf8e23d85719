import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings

from achedge import rng
from achedge.dual import i_instance
from achedge.model import ProblemSpec, derived_constants
from achedge.simulate import PricePath, sample_path
from achedge.strategy import (
    feedback_coefficients,
    feedback_rate,
    initial_rate,
    integrate_closed_loop,
    target_position,
)
from achedge.variational import mean_of_optimal_delta

from .strategies import problems


def worked_rate_mp():
    mpmath.mp.dps = 30
    th = mpmath.tanh(mpmath.mpf("0.5"))
    return float(2 * mpmath.mpf("0.25") * th / (1 - 4 * mpmath.mpf("0.25") * th))


def test_zero_claim_zero_position_trades_nothing(zero):
    for s in (-3.0, 0.0, 2.5):
        assert feedback_rate(zero, 0.3, s, 0.0) == 0.0


def test_worked_initial_rate(worked):
    want = worked_rate_mp()
    assert want == pytest.approx(0.42957045711476131, rel=1e-15)
    assert float(feedback_rate(worked, 0.0, 1.0, 0.0)) == pytest.approx(want, rel=1e-14)
    assert initial_rate(worked) == pytest.approx(want, rel=1e-14)


def test_pure_mean_reversion(liquidation):
    p = liquidation.replace(alpha=2.0, sigma=0.7, lambda_impact=0.4)
    sr = derived_constants(p).sqrt_rho
    for t, pos in [(0.0, 1.0), (0.5, -0.3), (0.99, 2.0)]:
        want = -sr / math.tanh(sr * (1 - t)) * pos
        assert feedback_rate(p, t, 123.0, pos) == pytest.approx(want, rel=1e-13)


def test_rejects_maturity(worked):
    with pytest.raises(ValueError):
        feedback_rate(worked, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        target_position(worked, 1.5, 1.0)


def test_vectorizes(worked):
    s = np.array([0.5, 1.0, 1.5])
    pos = np.array([0.1, 0.0, -0.2])
    out = feedback_rate(worked, 0.2, s, pos)
    assert out.shape == (3,)
    assert out[1] == feedback_rate(worked, 0.2, 1.0, 0.0)


def test_coefficients_positive_up_to_maturity(worked):
    for t in np.linspace(0, 1, 50, endpoint=False):
        fc = feedback_coefficients(worked.replace(kappa=0.4999), float(t))
        assert fc.denom > 0 and fc.reversion > 0


def test_target_zero_without_claim_or_drift(liquidation):
    for t in (0.0, 0.4, 0.9):
        assert target_position(liquidation, t, 5.0) == 0.0


def test_target_vanishes_at_maturity(worked):
    vals = [abs(target_position(worked, 1 - 10.0**-k, 1.0)) for k in range(1, 8)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-6


def test_frictionless_limit(skewed):
    t, s = 0.3, 1.7
    frictionless = 2 * skewed.kappa * s + skewed.mu / (skewed.alpha * skewed.sigma**2)
    gaps = [abs(target_position(skewed.replace(lambda_impact=10.0**-k), t, s) - frictionless)
            for k in range(1, 7)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-2 * abs(frictionless)


def test_initial_rate_is_feedback_at_zero(skewed):
    assert initial_rate(skewed) == float(feedback_rate(skewed, 0.0, skewed.s0, skewed.phi0))


@given(problems())
@settings(max_examples=100, deadline=None)
def test_initial_rate_consistent_with_variational_mean(p):
    want = (mean_of_optimal_delta(i_instance(p)) - p.phi0 * p.lambda_impact / p.t_horizon) / p.lambda_impact
    assert initial_rate(p) == pytest.approx(want, rel=1e-12, abs=1e-12)


def liquidation_error(p, n):
    path = sample_path(p, n, seed=3, path_index=0)
    strat = integrate_closed_loop(p, path)
    sr = derived_constants(p).sqrt_rho
    exact = p.phi0 * np.sinh(sr * (p.t_horizon - strat.grid)) / np.sinh(sr * p.t_horizon)
    return float(np.max(np.abs(strat.position - exact)))


def test_pure_liquidation_profile(liquidation):
    errs = [liquidation_error(liquidation, n) for n in (250, 500, 1000, 2000)]
    for n, e in zip((250, 500, 1000, 2000), errs):
        assert e <= 5.0 / n
    for a, b in zip(errs, errs[1:]):
        assert a / b == pytest.approx(2.0, rel=0.1)


def test_zero_instance_never_trades(zero):
    for idx in range(3):
        strat = integrate_closed_loop(zero, sample_path(zero, 64, 1, idx))
        assert np.all(strat.phi == 0.0) and np.all(strat.position == 0.0)


def test_forced_liquidation_is_exact(worked):
    for idx in range(5):
        path = sample_path(worked.replace(phi0=0.7), 100, 9, idx)
        strat = integrate_closed_loop(worked.replace(phi0=0.7), path)
        assert strat.position[-1] == 0.0
        dt = strat.dt
        assert np.allclose(strat.position[1:], strat.position[:-1] + strat.phi * dt, atol=1e-14)
        assert strat.position[0] == 0.7


def test_path_independent_without_claim(liquidation):
    p = liquidation.replace(mu=0.2)
    a = integrate_closed_loop(p, sample_path(p, 200, 1, 0))
    b = integrate_closed_loop(p, sample_path(p, 200, 2, 17))
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.position, b.position)


def test_liquidation_before_final_step(worked):
    p = worked.replace(phi0=2.0)
    strat = integrate_closed_loop(p, sample_path(p, 4000, 0, 0))
    assert abs(strat.position[-2]) <= 0.01 * abs(p.phi0) + 0.01


def nested_prices(p, n, seed):
    w = rng.brownian_grid(seed, p.t_horizon, n)
    grid = np.linspace(0, p.t_horizon, n + 1)
    return PricePath(grid, p.s0 + p.sigma * w + p.mu * grid)


def test_grid_convergence_first_order(skewed):
    # the per-path error has a random O(dt) coefficient; average the sup-norm over paths
    ns = (250, 500, 1000, 2000)
    diffs = np.zeros(3)
    for seed in range(64):
        pos = {n: integrate_closed_loop(skewed, nested_prices(skewed, n, seed)).position for n in ns}
        diffs += [np.max(np.abs(pos[n][:-1] - pos[2 * n][:-1:2])) for n in ns[:-1]]
    assert diffs[0] / diffs[1] == pytest.approx(2.0, rel=0.1)
    assert diffs[1] / diffs[2] == pytest.approx(2.0, rel=0.1)


def test_rejects_bad_grids(worked):
    grid = np.linspace(0, 1, 33) ** 2
    with pytest.raises(ValueError):
        integrate_closed_loop(worked, PricePath(grid, np.ones(33)))
    with pytest.raises(ValueError):
        integrate_closed_loop(worked, sample_path(worked, 8, 0, 0))


def test_csv_export(worked):
    path = sample_path(worked, 16, 0, 0)
    strat = integrate_closed_loop(worked, path)
    lines = strat.to_csv(path.prices).splitlines()
    assert lines[0] == "t,price,phi,position"
    assert len(lines) == 18
