"""Dual value and dual optimizer of the hedging problem in the Bachelier model.

The dual target splits into a drift part, one instance of the variational problem
on ``[0, T]``, and a family of kernel parts indexed by ``s in [0, T)``, each another
instance on ``[s, T]`` with unit initial value and no drift or inventory.  The
optimal drift ``nu`` and kernels ``l(., s)`` are the instances' optimal profiles.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import simpson

from . import rng
from .model import ProblemSpec
from .strategy import feedback_rate
from .variational import (
    DEGENERATE_SQRT_RHO_T,
    VariationalInstance,
    VariationalSolution,
    evaluate_delta,
    mean_of_optimal_delta,
    solve_closed_form,
)

DEFAULT_QUAD_NODES = 201
DEFAULT_QUAD_TOL = 1e-8


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class DualValueReport:
    i_star: float
    j_integral: float
    total: float
    quad_nodes: int
    quad_error_estimate: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class DualKernel:
    grid: np.ndarray
    solutions: tuple[VariationalSolution | None, ...]  # None where the horizon has collapsed
    m0_hat: float
    gamma_hat: np.ndarray  # on grid[:-1]
    kernel: np.ndarray  # kernel[i, j] = l(t_i, s_j) for j <= i, zero above the diagonal


def i_instance(p: ProblemSpec) -> VariationalInstance:
    return VariationalInstance(
        kappa_v=p.kappa, s0_v=p.s0, mu_v=p.mu, phi0_v=p.phi0, sigma_v=p.sigma,
        alpha_v=p.alpha, lambda_v=p.lambda_impact, horizon_v=p.t_horizon,
    )


def j_instance(p: ProblemSpec, s: float) -> VariationalInstance:
    """Kernel instance for time ``s``.

    The unit-volatility normalization moves ``sigma^2`` into the claim coefficient
    and out of the impact coefficient, which keeps ``rho`` unchanged.
    """
    if not 0.0 <= s < p.t_horizon:
        raise ValueError(f"kernel instances need 0 <= s < T, got s={s!r}")
    var = p.sigma**2
    return VariationalInstance(
        kappa_v=p.kappa * var, s0_v=1.0, mu_v=0.0, phi0_v=0.0, sigma_v=1.0,
        alpha_v=p.alpha, lambda_v=p.lambda_impact / var, horizon_v=p.t_horizon - s,
    )


def _collapsed(p: ProblemSpec, s: float) -> bool:
    rho = p.alpha * p.sigma**2 / p.lambda_impact
    return s >= p.t_horizon or math.sqrt(rho) * (p.t_horizon - s) < DEGENERATE_SQRT_RHO_T


def j_star(p: ProblemSpec, s: float) -> float:
    """Optimal kernel value at ``s``; at the zero-horizon limit only the claim term
    ``kappa sigma^2`` survives."""
    if _collapsed(p, s):
        return p.kappa * p.sigma**2
    if p.kappa == 0.0:
        return 0.0
    return solve_closed_form(j_instance(p, s)).value


def j_profile(p: ProblemSpec, nodes: int = DEFAULT_QUAD_NODES) -> tuple[np.ndarray, np.ndarray]:
    s = np.linspace(0.0, p.t_horizon, nodes)
    return s, np.array([j_star(p, float(x)) for x in s])


def j_profile_csv(p: ProblemSpec, nodes: int = DEFAULT_QUAD_NODES) -> str:
    s, j = j_profile(p, nodes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "j_star"])
    for row in zip(s, j):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _simpson(p: ProblemSpec, nodes: int) -> float:
    s, j = j_profile(p, nodes)
    return float(simpson(j, x=s))


def dual_value(p: ProblemSpec, quad_nodes: int = DEFAULT_QUAD_NODES,
               quad_tol: float = DEFAULT_QUAD_TOL) -> DualValueReport:
    """Dual value ``I* + int_0^T J*_s ds``.

    The integral uses composite Simpson on ``quad_nodes`` and on twice as many
    intervals; the finer value is reported and the change between the two is the
    error estimate.
    """
    if quad_nodes < 3 or quad_nodes % 2 == 0:
        raise ValueError(f"quad_nodes must be odd and at least 3, got {quad_nodes}")
    i_star = solve_closed_form(i_instance(p)).value
    if p.kappa == 0.0:
        j_integral, err, used = 0.0, 0.0, quad_nodes
    else:
        coarse = _simpson(p, quad_nodes)
        used = 2 * quad_nodes - 1
        j_integral = _simpson(p, used)
        err = abs(j_integral - coarse)
    total = i_star + j_integral
    if err > quad_tol * (1.0 + abs(total)):
        raise QuadratureError(f"kernel quadrature did not converge: error estimate {err!r}")
    return DualValueReport(i_star, j_integral, total, used, err)


def m0_hat(p: ProblemSpec) -> float:
    return p.s0 + mean_of_optimal_delta(i_instance(p)) - p.phi0 * p.lambda_impact / p.t_horizon


def gamma_hat(p: ProblemSpec, s: float) -> float:
    if not s < p.t_horizon:
        raise ValueError(f"gamma_hat needs s < T, got s={s!r}")
    if _collapsed(p, s) or p.kappa == 0.0:
        return 1.0
    return 1.0 + mean_of_optimal_delta(j_instance(p, s))


def dual_kernel(p: ProblemSpec, n_steps: int) -> DualKernel:
    grid = np.linspace(0.0, p.t_horizon, n_steps + 1)
    kernel = np.zeros((n_steps + 1, n_steps + 1))
    solutions: list[VariationalSolution | None] = []
    gam = np.ones(n_steps)
    for j in range(n_steps):
        s = float(grid[j])
        if p.kappa == 0.0 or _collapsed(p, s):
            solutions.append(None)
            continue
        inst = j_instance(p, s)
        sol = solve_closed_form(inst)
        solutions.append(sol)
        gam[j] = 1.0 + sol.mean
        lag = np.clip(grid[j:] - s, 0.0, inst.horizon_v)
        kernel[j:, j] = evaluate_delta(sol, inst, lag)
    return DualKernel(grid, tuple(solutions), m0_hat(p), gam, kernel)


def verify_martingale_structure(p: ProblemSpec, seed: int, n_steps: int,
                                kernel: DualKernel | None = None) -> float:
    """Largest gap on ``[0, T)`` between the feedback rate and ``(M - S) / Lambda``.

    Prices are built under the dual measure from the optimal drift and kernels,
    the dual martingale from ``m0_hat`` and ``gamma_hat``; the position follows the
    feedback law by explicit Euler steps along those prices.
    """
    if kernel is None:
        kernel = dual_kernel(p, n_steps)
    grid = kernel.grid
    dt = p.t_horizon / n_steps
    dw = np.diff(rng.brownian_grid(seed, p.t_horizon, n_steps))

    inst = i_instance(p)
    nu = evaluate_delta(solve_closed_form(inst), inst, grid)
    weights = np.tril(1.0 + kernel.kernel[:, :-1], k=-1)
    prices = p.s0 + nu + p.sigma * (weights @ dw)
    mart = kernel.m0_hat + p.sigma * np.concatenate(([0.0], np.cumsum(kernel.gamma_hat * dw)))

    gap = 0.0
    position = p.phi0
    for i in range(n_steps):
        rate = float(feedback_rate(p, float(grid[i]), prices[i], position))
        gap = max(gap, abs(rate - (mart[i] - prices[i]) / p.lambda_impact))
        position += rate * dt
    return gap
