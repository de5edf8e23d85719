import json

import numpy as np
import pytest

from achedge.dual import dual_value
from achedge.simulate import (
    McOverflowError,
    Perturbation,
    PricePath,
    certainty_equivalent,
    claim_payoff,
    gradient_check,
    idle_then_liquidate,
    loss_exponents,
    mc_certainty_equivalent,
    naive_liquidation,
    paired_ce_difference,
    perturb,
    random_perturbations,
    sample_path,
    time_grid,
    wealth,
)
from achedge.strategy import StrategyPath, closed_loop, integrate_closed_loop

from .oracles import exact_feedback_ce


def const_path(s, n, T=1.0):
    return PricePath(np.linspace(0, T, n + 1), np.full(n + 1, s))


def test_sample_path_basics(worked):
    path = sample_path(worked, 50, 1, 0)
    assert path.prices[0] == worked.s0 and path.prices.shape == (51,)
    again = sample_path(worked, 50, 1, 0)
    assert np.array_equal(path.prices, again.prices)
    assert not np.array_equal(path.prices, sample_path(worked, 50, 1, 1).prices)


def test_terminal_moments(skewed):
    n = 100_000
    from achedge.simulate import price_block

    st = price_block(skewed, 1, 8, range(n))[:, -1]
    x = st - skewed.s0 - skewed.mu * skewed.t_horizon
    var = skewed.sigma**2 * skewed.t_horizon
    assert abs(x.mean()) <= 4 * np.sqrt(var / n)
    assert x.var() == pytest.approx(var, abs=4 * var * np.sqrt(2 / n))
    z = price_block(skewed.replace(mu=0.0), 1, 9, range(n))[:, -1] - skewed.s0
    assert abs(z.mean()) <= 4 * np.sqrt(var / n)


def test_wealth_examples(liquidation):
    p = liquidation.replace(s0=5.0)
    n = 10
    path = const_path(5.0, n)
    strat = StrategyPath(path.grid, np.full(n, -1.0), np.linspace(1, 0, n + 1))
    assert wealth(p, path, strat) == pytest.approx(-0.5, rel=1e-14)
    idle = StrategyPath(path.grid, np.zeros(n), np.zeros(n + 1))
    assert wealth(p.replace(phi0=0.0), path, idle) == 0.0


def test_wealth_affine_in_impact(worked):
    path = sample_path(worked, 40, 2, 0)
    strat = integrate_closed_loop(worked, path)
    quad = 0.5 * np.sum(strat.phi**2) * strat.dt
    w1 = wealth(worked, path, strat)
    w0 = wealth(worked.replace(lambda_impact=1e-300), path, strat)
    assert w0 - w1 == pytest.approx(quad, rel=1e-12)


def test_wealth_grid_mismatch(worked):
    path = sample_path(worked, 40, 2, 0)
    strat = integrate_closed_loop(worked, sample_path(worked, 20, 2, 0))
    with pytest.raises(ValueError):
        wealth(worked, path, strat)


def test_claim_payoff(worked):
    path = PricePath(np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    assert claim_payoff(worked, path) == 1.0
    assert claim_payoff(worked.replace(kappa=0.0), path) == 0.0
    near = worked.replace(kappa=0.999 * 0.5)
    assert np.isfinite(claim_payoff(near, sample_path(near, 10, 0, 0)))


def test_zero_problem_has_zero_ce(zero):
    est = mc_certainty_equivalent(zero, 500, 20, 0, np.zeros(20))
    assert est.value == 0.0 and est.std_err == 0.0
    est = mc_certainty_equivalent(zero, 500, 20, 0)
    assert est.value == 0.0 and est.std_err == 0.0


def test_estimate_is_deterministic_across_workers(worked):
    a = mc_certainty_equivalent(worked, 3000, 64, 11, threads=1)
    b = mc_certainty_equivalent(worked, 3000, 64, 11, threads=4)
    assert a == b
    e1 = loss_exponents(worked, 3000, 64, 11, block=100)
    e2 = loss_exponents(worked, 3000, 64, 11, block=3000)
    assert np.array_equal(e1, e2)
    assert certainty_equivalent(1.0, e1) == certainty_equivalent(1.0, e1[::-1])
    assert json.loads(a.to_json()) == {"value": a.value, "std_err": a.std_err, "n_paths": 3000,
                                       "n_steps": 64, "seed": 11}


@pytest.mark.parametrize("name", ["worked", "liquidation", "skewed"])
def test_mc_matches_exact_expectation_on_same_grid(name, request):
    p = request.getfixturevalue(name)
    n = 200
    est = mc_certainty_equivalent(p, 40_000, n, 5)
    assert abs(est.value - exact_feedback_ce(p, n)) <= 3 * est.std_err


def test_strong_duality_small_scale(liquidation):
    est = mc_certainty_equivalent(liquidation, 20_000, 500, 2)
    assert abs(est.value - dual_value(liquidation).total) <= 3 * est.std_err


def test_wealth_bound_holds_on_every_path(skewed):
    loss_exponents(skewed, 2000, 100, 4, check_bound=True)
    loss_exponents(skewed, 500, 100, 4, naive_liquidation(skewed, 100), check_bound=True)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflow_reports_path():
    from achedge.model import ProblemSpec

    p = ProblemSpec(1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0)

    def wild(grid, prices):
        phi = np.zeros(prices.shape[:-1] + (grid.size - 1,))
        phi[3] = np.inf
        return phi

    with pytest.raises(McOverflowError) as info:
        mc_certainty_equivalent(p, 10, 16, 0, wild)
    assert info.value.path_index == 3


def test_ce_scales_with_currency(skewed):
    lam = 3.0
    q = skewed.replace(s0=lam * skewed.s0, sigma=lam * skewed.sigma, mu=lam * skewed.mu,
                       lambda_impact=lam * skewed.lambda_impact, alpha=skewed.alpha / lam,
                       kappa=skewed.kappa / lam)
    for p0, q0 in [(skewed, q), (skewed.replace(kappa=0.0), q.replace(kappa=0.0))]:
        a = mc_certainty_equivalent(p0, 2000, 100, 3)
        b = mc_certainty_equivalent(q0, 2000, 100, 3)
        assert b.value == pytest.approx(lam * a.value, rel=1e-9)
        assert b.std_err == pytest.approx(lam * a.std_err, rel=1e-6)


def test_feedback_beats_idle_under_common_numbers(worked):
    n, paths = 500, 20_000
    fb = loss_exponents(worked, paths, n, 6)
    idle = loss_exponents(worked, paths, n, 6, np.zeros(n))
    diff, err = paired_ce_difference(worked.alpha, idle, fb)
    assert diff > 3 * err


def test_feedback_beats_naive_liquidation(liquidation):
    n, paths = 500, 20_000
    fb = loss_exponents(liquidation, paths, n, 6)
    naive = loss_exponents(liquidation, paths, n, 6, naive_liquidation(liquidation, n))
    diff, err = paired_ce_difference(liquidation.alpha, naive, fb)
    assert diff > 3 * err


def test_perturbation_validation():
    with pytest.raises(ValueError):
        Perturbation(np.ones(10), 1.0)
    Perturbation(np.r_[np.ones(5), -np.ones(5)], 1.0)


def test_perturb(worked):
    path = sample_path(worked.replace(phi0=1.0), 64, 0, 0)
    strat = integrate_closed_loop(worked.replace(phi0=1.0), path)
    psi = random_perturbations(64, 1.0, 1, 3)[0]
    assert perturb(strat, psi, 0.0) is strat
    same = perturb(strat, Perturbation(np.zeros(64), 1.0), 0.3)
    assert np.array_equal(same.phi, strat.phi) and np.array_equal(same.position, strat.position)
    moved = perturb(strat, psi, 0.3)
    assert moved.position[-1] == 0.0
    assert np.allclose(moved.position[1:], moved.position[:-1] + moved.phi * strat.dt, atol=1e-12)


def test_random_perturbations_are_zero_net():
    psis = random_perturbations(100, 2.0, 5, 1)
    for d in psis:
        assert abs(d.psi.sum()) < 1e-10
        assert np.sqrt(np.mean(d.psi**2)) == pytest.approx(1.0)
    again = random_perturbations(100, 2.0, 5, 1)
    assert all(np.array_equal(a.psi, b.psi) for a, b in zip(psis, again))


def test_local_optimality_bracket(worked):
    n, paths, h = 400, 20_000, 0.5
    psi = random_perturbations(n, 1.0, 1, 9)[0].psi
    grid = time_grid(worked, n)

    def shifted(eps):
        return lambda g, prices: closed_loop(worked, grid, prices)[0] + eps * psi

    base = loss_exponents(worked, paths, n, 1)
    for eps in (h, -h):
        diff, err = paired_ce_difference(worked.alpha, loss_exponents(worked, paths, n, 1, shifted(eps)), base)
        assert diff > 3 * err


def test_gradient_zero_direction_is_exact(worked):
    est = gradient_check(worked, Perturbation(np.zeros(50), 1.0), (0.1,), 500, 50, 0)
    assert est.slope == 0.0 and est.std_err == 0.0


def test_gradient_matches_finite_difference_of_estimates(worked):
    n, paths, h = 100, 3000, 0.05
    psi = random_perturbations(n, 1.0, 1, 4)[0]
    est = gradient_check(worked, psi, (h,), paths, n, 2)
    grid = time_grid(worked, n)
    up = mc_certainty_equivalent(worked, paths, n, 2, lambda g, s: closed_loop(worked, grid, s)[0] + h * psi.psi)
    dn = mc_certainty_equivalent(worked, paths, n, 2, lambda g, s: closed_loop(worked, grid, s)[0] - h * psi.psi)
    assert est.slope == pytest.approx((up.value - dn.value) / (2 * h), rel=1e-9)


def test_gradient_flat_at_optimum_and_steep_elsewhere(liquidation):
    n, paths = 400, 20_000
    psis = random_perturbations(n, 1.0, 5, 2)
    at_opt = gradient_check(liquidation, psis, (0.01,), paths, n, 3)
    assert all(abs(e.slope) <= 3 * e.std_err for e in at_opt)
    off = gradient_check(liquidation, psis, (0.01,), paths, n, 3, base=idle_then_liquidate(liquidation, n))
    assert max(abs(e.slope) / e.std_err for e in off) > 3
