"""Cross-check battery behind ``achedge verify``."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import dual, simulate, strategy, variational
from .model import ProblemError, ProblemSpec, positivity_margins, validate_problem


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: Any
    tolerance: Any
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class VerifyConfig:
    paths: int = simulate.DESK_PATHS
    steps: int = simulate.DESK_STEPS
    seed: int = 0
    quad_nodes: int = dual.DEFAULT_QUAD_NODES
    qp_steps: int = 2000
    el_steps: int = 10_000
    liquidation_steps: int = 4000
    directions: int = 20
    eps: float = 0.01
    martingale_steps: int = 1000
    seed_sweep: int = 0
    threads: int | None = None


def check_validation(p: ProblemSpec) -> CheckResult:
    try:
        validate_problem(p)
    except ProblemError as exc:
        return CheckResult("validation", False, str(exc), "all invariants")
    denom, reversion = positivity_margins(p)
    return CheckResult("validation", True, {"denominator_margin": denom, "reversion_margin": reversion},
                       "> 0")


def check_oracle_equivalence(p: ProblemSpec, n: int) -> CheckResult:
    inst = dual.i_instance(p)
    sol = variational.solve_closed_form(inst)
    traj = variational.solve_discretized(inst, n)
    gap = abs(sol.value - traj.objective_value) / (1.0 + abs(sol.value))
    dist = float(np.max(np.abs(traj.values - variational.evaluate_delta(sol, inst, traj.grid))))
    return CheckResult("oracle_equivalence", gap <= 1e-4 and dist <= 1e-3,
                       {"value_gap": gap, "sup_distance": dist},
                       {"value_gap": 1e-4, "sup_distance": 1e-3}, {"n": n})


def _profile_extended(sol: variational.VariationalSolution, inst: variational.VariationalInstance,
                      n: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid and optimal profile in extended precision.

    For small ``sqrt(rho) T`` the profile is a near-cancellation of large hyperbolic
    terms, and the second difference over a fine grid would mostly see double
    round-off.  The coefficients are the double-precision ones.
    """
    ld = np.longdouble
    T = ld(inst.horizon_v)
    t = np.arange(n + 1, dtype=ld) * (T / n)
    sr = ld(inst.sqrt_rho)
    z = sr * T

    def ratio(a):  # sinh(a) / sinh(z), overflow-free
        return np.exp(a - z) * np.expm1(-2 * a) / np.expm1(-2 * z)

    c3 = ld(sol.c3)
    return t, (ld(sol.x_bar) - c3) * ratio(sr * t) - c3 * ratio(sr * (T - t)) + c3


def euler_lagrange_spread(inst: variational.VariationalInstance, n: int) -> float:
    """Relative spread of ``delta'' - rho delta`` over the interior of an ``n``-step grid."""
    sol = variational.solve_closed_form(inst)
    t, d = _profile_extended(sol, inst, n)
    h = t[1] - t[0]
    resid = (d[2:] - 2 * d[1:-1] + d[:-2]) / (h * h) - np.longdouble(inst.rho_v) * d[1:-1]
    scale = max(abs(float(np.mean(resid))), inst.rho_v * float(np.max(np.abs(d))), 1e-300)
    return float(np.ptp(resid)) / scale


def energy_gap(inst: variational.VariationalInstance, n: int) -> float:
    """Relative gap between the quadrature of ``rho int delta^2 + int delta'^2`` and its closed form."""
    from scipy.integrate import simpson

    sol = variational.solve_closed_form(inst)
    t = np.linspace(0.0, inst.horizon_v, n + 1)
    d = variational.evaluate_delta(sol, inst, t)
    dd = variational.evaluate_delta_dot(sol, inst, t)
    quad = float(simpson(inst.rho_v * d * d + dd * dd, x=t))
    exact = variational.kinetic_identity(inst, sol.x_bar, sol.y_bar)
    return abs(quad - exact) / max(abs(exact), 1e-300)


def check_euler_lagrange(p: ProblemSpec, n: int) -> CheckResult:
    inst = dual.i_instance(p)
    spread = euler_lagrange_spread(inst, n)
    return CheckResult("euler_lagrange", spread <= 1e-6, spread, 1e-6, {"n": n})


def check_energy_identity(p: ProblemSpec, n: int) -> CheckResult:
    gap = energy_gap(dual.i_instance(p), n)
    return CheckResult("energy_identity", gap <= 1e-6, gap, 1e-6, {"n": n})


def check_consistency_chain(p: ProblemSpec) -> CheckResult:
    a = (dual.m0_hat(p) - p.s0) / p.lambda_impact
    b = strategy.initial_rate(p)
    c = float(strategy.feedback_rate(p, 0.0, p.s0, p.phi0))
    err = max(abs(a - b), abs(b - c)) / (1.0 + abs(b))
    return CheckResult("consistency_chain", err <= 1e-12, err, 1e-12,
                       {"m0_rate": a, "initial_rate": b, "feedback_rate_t0": c})


def check_liquidation(p: ProblemSpec, n: int, seed: int) -> CheckResult:
    path = simulate.sample_path(p, n, seed, 0)
    strat = strategy.integrate_closed_loop(p, path)
    before = abs(float(strat.position[-2]))
    tol = 0.01 * abs(p.phi0) + 0.01
    return CheckResult("liquidation", before <= tol and strat.position[-1] == 0.0,
                       {"position_before_final_step": before, "terminal_position": float(strat.position[-1])},
                       tol, {"n": n})


def check_gradient(p: ProblemSpec, cfg: VerifyConfig) -> CheckResult:
    psis = simulate.random_perturbations(cfg.steps, p.t_horizon, cfg.directions, cfg.seed + 1)
    est = simulate.gradient_check(p, psis, (cfg.eps,), cfg.paths, cfg.steps, cfg.seed,
                                  threads=cfg.threads)
    z = [abs(e.slope) / e.std_err if e.std_err > 0 else (0.0 if e.slope == 0 else math.inf) for e in est]
    return CheckResult("gradient_at_optimum", max(z) <= 3.0, {"max_abs_z": max(z)}, 3.0,
                       {"slopes": [e.slope for e in est], "std_errs": [e.std_err for e in est]})


def martingale_ratios(p: ProblemSpec, n: int, seeds: list[int]) -> tuple[np.ndarray, np.ndarray]:
    coarse = dual.dual_kernel(p, n)
    fine = dual.dual_kernel(p, 2 * n)
    r1 = np.array([dual.verify_martingale_structure(p, s, n, coarse) for s in seeds])
    r2 = np.array([dual.verify_martingale_structure(p, s, 2 * n, fine) for s in seeds])
    return r1, r2


def check_martingale(p: ProblemSpec, cfg: VerifyConfig) -> CheckResult:
    seeds = list(range(cfg.seed, cfg.seed + max(cfg.seed_sweep, 1)))
    r1, r2 = martingale_ratios(p, cfg.martingale_steps, seeds)
    scale = 1e-12 * (1.0 + abs(p.s0))
    if np.all(r1 <= scale) and np.all(r2 <= scale):
        return CheckResult("martingale_structure", True, {"residual": float(r1.max())}, "round-off")
    ratio = float(np.mean(r1) / np.mean(r2))
    detail = {"n": cfg.martingale_steps, "seeds": seeds, "residual_n": r1.tolist(),
              "residual_2n": r2.tolist(), "per_seed_ratio": (r1 / r2).tolist()}
    if len(seeds) > 1:
        detail["stats"] = {"mean_n": float(r1.mean()), "max_n": float(r1.max()),
                           "mean_2n": float(r2.mean()), "max_2n": float(r2.max())}
    return CheckResult("martingale_structure", 1.8 <= ratio <= 2.2, {"ratio": ratio}, [1.8, 2.2], detail)


def check_strong_duality(p: ProblemSpec, cfg: VerifyConfig) -> CheckResult:
    report = dual.dual_value(p, cfg.quad_nodes)
    est = simulate.mc_certainty_equivalent(p, cfg.paths, cfg.steps, cfg.seed, threads=cfg.threads)
    gap = abs(est.value - report.total)
    ok = gap <= 3.0 * est.std_err or gap <= 1e-12 * (1.0 + abs(report.total))
    return CheckResult("strong_duality", ok, {"gap": gap, "std_err": est.std_err}, "3 std_err",
                       {"dual_total": report.total, "mc_value": est.value})


def run_battery(p: ProblemSpec, cfg: VerifyConfig) -> list[CheckResult]:
    first = check_validation(p)
    if not first.passed:
        return [first]
    return [
        first,
        check_oracle_equivalence(p, cfg.qp_steps),
        check_euler_lagrange(p, cfg.el_steps),
        check_energy_identity(p, cfg.el_steps),
        check_consistency_chain(p),
        check_liquidation(p, cfg.liquidation_steps, cfg.seed),
        check_gradient(p, cfg),
        check_martingale(p, cfg),
        check_strong_duality(p, cfg),
    ]
