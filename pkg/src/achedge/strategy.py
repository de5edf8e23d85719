"""Optimal feedback trading law and its closed-loop integration along price paths."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .model import ProblemSpec, derived_constants


@dataclass(frozen=True)
class FeedbackCoefficients:
    t: float
    tanh_half: float
    coth_full: float
    denom: float
    reversion: float  # coth_full - 2 Lambda sqrt(rho) kappa
    frictionless: float  # mu / (alpha sigma^2), the drift part of the frictionless holding


@dataclass(frozen=True)
class StrategyPath:
    grid: np.ndarray
    phi: np.ndarray
    position: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def to_csv(self, prices: np.ndarray) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "price", "phi", "position"])
        phi = np.append(self.phi, 0.0)  # no trading at maturity
        for row in zip(self.grid, prices, phi, self.position):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def feedback_coefficients(p: ProblemSpec, t: float) -> FeedbackCoefficients:
    if not 0.0 <= t < p.t_horizon:
        raise ValueError(f"feedback law needs 0 <= t < T, got t={t!r}")
    sr = derived_constants(p).sqrt_rho
    tau = sr * (p.t_horizon - t)
    th = math.tanh(tau / 2.0)
    coth = 1.0 / math.tanh(tau)
    return FeedbackCoefficients(
        t=t,
        tanh_half=th,
        coth_full=coth,
        denom=1.0 / sr - 4.0 * p.kappa * p.lambda_impact * th,
        reversion=coth - 2.0 * p.lambda_impact * sr * p.kappa,
        frictionless=p.mu / (p.alpha * p.sigma**2),
    )


def feedback_rate(p: ProblemSpec, t: float, s, phi_pos):
    """Optimal trading rate at time ``t`` given price ``s`` and position ``phi_pos``.

    Vectorizes over ``s`` and ``phi_pos``.
    """
    fc = feedback_coefficients(p, t)
    return ((2.0 * p.kappa * s + fc.frictionless) * fc.tanh_half - fc.reversion * phi_pos) / fc.denom


def target_position(p: ProblemSpec, t: float, s):
    fc = feedback_coefficients(p, t)
    return (2.0 * p.kappa * s + fc.frictionless) * fc.tanh_half / fc.reversion


def initial_rate(p: ProblemSpec) -> float:
    return float(feedback_rate(p, 0.0, p.s0, p.phi0))


def _uniform_step(grid: np.ndarray) -> float:
    grid = np.asarray(grid, dtype=float)
    steps = np.diff(grid)
    dt = (grid[-1] - grid[0]) / steps.size
    if grid[0] != 0.0 or not np.allclose(steps, dt, rtol=1e-9, atol=0.0):
        raise ValueError("price path must live on a uniform grid starting at 0")
    return dt


def closed_loop(p: ProblemSpec, grid: np.ndarray, prices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Explicit Euler closed loop for a batch of paths.

    ``prices`` has shape ``(..., n + 1)``; returns ``(phi, position)`` with shapes
    ``(..., n)`` and ``(..., n + 1)``.  The final interval liquidates whatever
    position is left, so ``position[..., n]`` is exactly zero.
    """
    dt = _uniform_step(grid)
    prices = np.asarray(prices, dtype=float)
    n = prices.shape[-1] - 1
    phi = np.empty(prices.shape[:-1] + (n,))
    position = np.empty_like(prices)
    position[..., 0] = p.phi0
    for i in range(n - 1):
        phi[..., i] = feedback_rate(p, float(grid[i]), prices[..., i], position[..., i])
        position[..., i + 1] = position[..., i] + phi[..., i] * dt
    phi[..., n - 1] = -position[..., n - 1] / dt
    position[..., n] = 0.0
    return phi, position


def integrate_closed_loop(p: ProblemSpec, path) -> StrategyPath:
    n = len(path.grid) - 1
    if n < 16:
        raise ValueError(f"closed-loop integration needs at least 16 steps, got {n}")
    phi, position = closed_loop(p, path.grid, path.prices)
    return StrategyPath(np.asarray(path.grid, dtype=float), phi, position)
