"""Bachelier paths, trading wealth, and Monte Carlo certainty equivalents."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence, Union

import numpy as np

from . import rng
from .model import ProblemSpec
from .strategy import StrategyPath, closed_loop

DESK_PATHS = 100_000
DESK_STEPS = 2000
BLOCK_PATHS = 2048

StrategySource = Union[str, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


class McOverflowError(OverflowError):
    def __init__(self, path_index: int, value: float):
        super().__init__(f"non-finite exponent alpha*(claim - wealth) = {value!r} on path {path_index}")
        self.path_index = path_index


@dataclass(frozen=True)
class PricePath:
    grid: np.ndarray
    prices: np.ndarray


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_err: float
    n_paths: int
    n_steps: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Perturbation:
    """Rate perturbation, one value per grid interval, with zero net quantity."""

    psi: np.ndarray
    t_horizon: float

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        object.__setattr__(self, "psi", psi)
        dt = self.t_horizon / psi.size
        total = math.fsum(psi) * dt
        if abs(total) > 1e-12 * (1.0 + math.fsum(np.abs(psi)) * dt):
            raise ValueError(f"perturbation must integrate to zero, got {total!r}")


@dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    std_err: float
    eps: float
    ladder: tuple[tuple[float, float, float], ...]  # (eps, slope, std_err) per rung


def time_grid(p: ProblemSpec, n_steps: int) -> np.ndarray:
    return np.linspace(0.0, p.t_horizon, n_steps + 1)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("ACHEDGE_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ValueError(f"threads must be positive, got {threads}")
    return threads


def price_block(p: ProblemSpec, n_steps: int, seed: int, path_indices: Sequence[int]) -> np.ndarray:
    dt = p.t_horizon / n_steps
    z = rng.normal_block(seed, path_indices, n_steps)
    steps = p.mu * dt + p.sigma * math.sqrt(dt) * z
    out = np.empty((z.shape[0], n_steps + 1))
    out[:, 0] = p.s0
    np.cumsum(steps, axis=1, out=out[:, 1:])
    out[:, 1:] += p.s0
    return out


def sample_path(p: ProblemSpec, n_steps: int, seed: int, path_index: int) -> PricePath:
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    return PricePath(time_grid(p, n_steps), price_block(p, n_steps, seed, [path_index])[0])


def wealth_batch(p: ProblemSpec, dt: float, prices: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Left-endpoint wealth for arrays of shape ``(..., n + 1)`` prices and ``(..., n)`` rates."""
    s = prices[..., :-1]
    return (-p.phi0 * p.s0 - np.sum(phi * s, axis=-1) * dt
            - 0.5 * p.lambda_impact * np.sum(phi * phi, axis=-1) * dt)


def wealth(p: ProblemSpec, path: PricePath, strat: StrategyPath) -> float:
    grid = np.asarray(path.grid)
    if grid.shape != np.asarray(strat.grid).shape or not np.array_equal(grid, strat.grid):
        raise ValueError("price path and strategy live on different grids")
    if np.asarray(strat.phi).shape[-1] != grid.size - 1:
        raise ValueError("strategy needs one rate per grid interval")
    dt = float(grid[1] - grid[0])
    return float(wealth_batch(p, dt, np.asarray(path.prices), np.asarray(strat.phi)))


def wealth_upper_bound(p: ProblemSpec, dt: float, prices: np.ndarray) -> np.ndarray:
    return -p.phi0 * p.s0 + np.sum(prices[..., :-1] ** 2, axis=-1) * dt / (2.0 * p.lambda_impact)


def claim_payoff(p: ProblemSpec, path: PricePath) -> float:
    return p.kappa * float(path.prices[-1]) ** 2


def _rates(p: ProblemSpec, grid: np.ndarray, prices: np.ndarray, source: StrategySource) -> np.ndarray:
    if isinstance(source, str):
        if source != "feedback":
            raise ValueError(f"unknown strategy source {source!r}")
        return closed_loop(p, grid, prices)[0]
    if callable(source):
        return np.asarray(source(grid, prices), dtype=float)
    phi = np.asarray(source, dtype=float)
    if phi.shape != (grid.size - 1,):
        raise ValueError("fixed strategy needs one rate per grid interval")
    return np.broadcast_to(phi, prices.shape[:-1] + phi.shape)


def _blocks(n_paths: int, block: int) -> list[range]:
    return [range(a, min(a + block, n_paths)) for a in range(0, n_paths, block)]


def _run_blocks(fn, n_paths: int, threads: int | None, block: int) -> list:
    chunks = _blocks(n_paths, block)
    workers = resolve_threads(threads)
    if workers == 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def _check_finite(exponents: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(exponents))
    if bad.size:
        raise McOverflowError(int(bad[0]), float(exponents[bad[0]]))


def _log_mean_exp(exponents: np.ndarray) -> tuple[float, float, np.ndarray]:
    """``log mean exp(x)`` with the shifted weights and their exact mean.

    Sums go through ``math.fsum`` so the result is independent of path order.
    """
    shift = float(np.max(exponents))
    w = np.exp(exponents - shift)
    mean_w = math.fsum(w) / w.size
    return shift + math.log(mean_w), mean_w, w


def _std(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    mean = math.fsum(values) / values.size
    return math.sqrt(math.fsum((values - mean) ** 2) / (values.size - 1))


def loss_exponents(p: ProblemSpec, n_paths: int, n_steps: int, seed: int,
                   strategy_source: StrategySource = "feedback", *, threads: int | None = None,
                   block: int = BLOCK_PATHS, check_bound: bool = False) -> np.ndarray:
    """Per-path ``alpha * (claim - wealth)``, ordered by path index."""
    grid = time_grid(p, n_steps)
    dt = p.t_horizon / n_steps

    def run(paths: range) -> np.ndarray:
        prices = price_block(p, n_steps, seed, paths)
        phi = _rates(p, grid, prices, strategy_source)
        v = wealth_batch(p, dt, prices, phi)
        if check_bound:
            assert np.all(v <= wealth_upper_bound(p, dt, prices) + 1e-9 * (1.0 + np.abs(v)))
        return p.alpha * (p.kappa * prices[:, -1] ** 2 - v)

    return np.concatenate(_run_blocks(run, n_paths, threads, block))


def certainty_equivalent(alpha: float, exponents: np.ndarray) -> tuple[float, float]:
    """``(1/alpha) log mean exp(exponents)`` and its delta-method standard error."""
    _check_finite(exponents)
    log_mean, mean_w, w = _log_mean_exp(exponents)
    std_err = _std(w) / (math.sqrt(w.size) * mean_w * alpha)
    return log_mean / alpha, std_err


def paired_ce_difference(alpha: float, exps_a: np.ndarray, exps_b: np.ndarray) -> tuple[float, float]:
    """``CE(a) - CE(b)`` for exponents computed on the same paths, with the
    delta-method standard error of the paired difference."""
    if exps_a.shape != exps_b.shape:
        raise ValueError("paired comparison needs exponents from the same paths")
    _check_finite(exps_a)
    _check_finite(exps_b)
    la, ma, wa = _log_mean_exp(exps_a)
    lb, mb, wb = _log_mean_exp(exps_b)
    u = wa / ma - wb / mb
    return (la - lb) / alpha, _std(u) / (math.sqrt(u.size) * alpha)


def mc_certainty_equivalent(p: ProblemSpec, n_paths: int = DESK_PATHS, n_steps: int = DESK_STEPS,
                            seed: int = 0, strategy_source: StrategySource = "feedback", *,
                            threads: int | None = None, check_bound: bool = False) -> McEstimate:
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be positive")
    exps = loss_exponents(p, n_paths, n_steps, seed, strategy_source,
                          threads=threads, check_bound=check_bound)
    value, std_err = certainty_equivalent(p.alpha, exps)
    return McEstimate(value, std_err, n_paths, n_steps, seed)


def perturb(strat: StrategyPath, psi: Perturbation, eps: float) -> StrategyPath:
    phi = np.asarray(strat.phi, dtype=float)
    if psi.psi.shape != phi.shape[-1:]:
        raise ValueError("perturbation and strategy have different grids")
    if eps == 0.0:
        return strat
    dt = strat.dt
    shift = np.concatenate(([0.0], np.cumsum(psi.psi) * dt))
    shift[-1] = 0.0
    return StrategyPath(strat.grid, phi + eps * psi.psi, strat.position + eps * shift)


def naive_liquidation(p: ProblemSpec, n_steps: int) -> np.ndarray:
    """Constant-rate liquidation ``-phi0 / T``."""
    return np.full(n_steps, -p.phi0 / p.t_horizon)


def idle_then_liquidate(p: ProblemSpec, n_steps: int) -> np.ndarray:
    """No trading until the last interval, which dumps the whole position."""
    phi = np.zeros(n_steps)
    phi[-1] = -p.phi0 * n_steps / p.t_horizon
    return phi


def gradient_check(p: ProblemSpec, psis: Sequence[Perturbation] | Perturbation,
                   eps_ladder: Sequence[float] = (1e-2,), n_paths: int = DESK_PATHS,
                   n_steps: int = DESK_STEPS, seed: int = 0,
                   base: StrategySource = "feedback", *, threads: int | None = None,
                   block: int = BLOCK_PATHS) -> list[SlopeEstimate] | SlopeEstimate:
    """Central-difference slopes of the CE along perturbation directions.

    All rungs and directions share one set of paths (common random numbers).  The
    perturbed strategy is ``phi + eps * psi`` on top of the base rates, so wealth is
    quadratic in ``eps`` and one pass over the paths serves every direction.
    """
    single = isinstance(psis, Perturbation)
    directions = [psis] if single else list(psis)
    psi = np.array([d.psi for d in directions])
    if psi.shape[1] != n_steps:
        raise ValueError("perturbations must have one value per step")
    eps_ladder = [float(e) for e in eps_ladder]
    if not eps_ladder or min(eps_ladder) <= 0.0:
        raise ValueError("eps ladder needs positive entries")
    grid = time_grid(p, n_steps)
    dt = p.t_horizon / n_steps
    curvature = 0.5 * p.lambda_impact * np.sum(psi * psi, axis=1) * dt

    def run(paths: range):
        prices = price_block(p, n_steps, seed, paths)
        phi = _rates(p, grid, prices, base)
        base_exp = p.alpha * (p.kappa * prices[:, -1] ** 2 - wealth_batch(p, dt, prices, phi))
        linear = (prices[:, :-1] + p.lambda_impact * phi) @ psi.T * dt
        return base_exp, linear

    parts = _run_blocks(run, n_paths, threads, block)
    base_exp = np.concatenate([b for b, _ in parts])
    linear = np.concatenate([lin for _, lin in parts])
    _check_finite(base_exp)

    results = []
    for k in range(len(directions)):
        rungs = []
        for h in eps_ladder:
            # wealth(eps) = wealth(0) - eps * linear - eps^2 * curvature
            up = base_exp + p.alpha * (h * linear[:, k] + h * h * curvature[k])
            down = base_exp + p.alpha * (-h * linear[:, k] + h * h * curvature[k])
            _check_finite(up)
            _check_finite(down)
            lu, mu, wu = _log_mean_exp(up)
            ld, md, wd = _log_mean_exp(down)
            slope = (lu - ld) / (2.0 * h * p.alpha)
            u = wu / mu - wd / md
            err = _std(u) / (math.sqrt(u.size) * 2.0 * h * p.alpha)
            rungs.append((h, slope, err))
        h, slope, err = min(rungs, key=lambda r: r[0])
        results.append(SlopeEstimate(slope, err, h, tuple(rungs)))
    return results[0] if single else results


def random_perturbations(n_steps: int, t_horizon: float, count: int, seed: int,
                         modes: int = 5) -> list[Perturbation]:
    """Smooth zero-net directions: random combinations of ``cos(k pi t / T)``, ``k = 1..modes``,
    sampled at interval midpoints and normalized to unit RMS."""
    mid = (np.arange(n_steps) + 0.5) / n_steps
    basis = np.cos(np.pi * np.outer(np.arange(1, modes + 1), mid))
    out = []
    for j in range(count):
        coef = rng.normals(seed, j, modes)
        psi = coef @ basis
        psi -= math.fsum(psi) / n_steps
        psi /= math.sqrt(np.mean(psi * psi))
        out.append(Perturbation(psi, t_horizon))
    return out
