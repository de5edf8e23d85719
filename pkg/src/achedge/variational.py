"""Deterministic variational backbone.

Maximizes, over continuous ``delta`` on ``[0, T]`` with ``delta(0) = 0``,

    kappa (s0 + delta_T)^2 - 1/(2 alpha sigma^2) int (delta' - mu)^2
        + 1/(2 Lambda) [ (phi0 Lambda - int delta)^2 / T - int delta^2 ].

The closed form reduces the problem to a 2-D concave quadratic in the terminal
value ``x = delta_T`` and the integral ``y = int delta``; the optimizer is a
combination of hyperbolic sines.  :func:`solve_discretized` solves the same
problem over piecewise-linear trajectories and serves as an independent check.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

DEGENERATE_SQRT_RHO_T = 1e-6
_SERIES_CUTOFF = 0.05


class DegenerateHorizonError(ValueError):
    """sqrt(rho) * T is too small for the closed form to be evaluated reliably."""


class NonConcaveError(ValueError):
    """The discrete objective is not strictly concave (kappa outside its bound)."""


@dataclass(frozen=True)
class VariationalInstance:
    kappa_v: float
    s0_v: float
    mu_v: float
    phi0_v: float
    sigma_v: float
    alpha_v: float
    lambda_v: float
    horizon_v: float

    def __post_init__(self):
        for name in ("sigma_v", "alpha_v", "lambda_v", "horizon_v"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        bound = 1.0 / (2.0 * self.alpha_v * self.sigma_v**2 * self.horizon_v)
        if not 0.0 <= self.kappa_v < bound:
            raise ValueError(f"kappa_v must lie in [0, {bound!r}), got {self.kappa_v!r}")

    @property
    def rho_v(self) -> float:
        return self.alpha_v * self.sigma_v**2 / self.lambda_v

    @property
    def sqrt_rho(self) -> float:
        return math.sqrt(self.rho_v)

    @property
    def drift_target(self) -> float:
        """Linear coefficient of the terminal value, ``2 kappa s0 + mu/(alpha sigma^2)``."""
        return 2.0 * self.kappa_v * self.s0_v + self.mu_v / (self.alpha_v * self.sigma_v**2)


@dataclass(frozen=True)
class QuadCoefficients:
    a_coef: float
    b_coef: float
    c_coef: float
    eta: float
    theta: float
    det: float  # a_coef * b_coef - c_coef**2, evaluated from its simplified form


@dataclass(frozen=True)
class VariationalSolution:
    c1: float
    c2: float
    c3: float
    x_bar: float
    y_bar: float
    value: float
    mean: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class DiscreteTrajectory:
    grid: np.ndarray
    values: np.ndarray
    objective_value: float

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "values": self.values.tolist(),
                "objective_value": self.objective_value}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "delta"])
        for t, d in zip(self.grid, self.values):
            w.writerow([repr(float(t)), repr(float(d))])
        return buf.getvalue()


# -- hyperbolic helpers -----------------------------------------------------

def gap(z):
    """``z - 2 tanh(z/2)``, with a series near zero where the difference cancels."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_CUTOFF
    z2 = z * z
    series = z * z2 * (1.0 / 12 - z2 * (1.0 / 120 - z2 * (17.0 / 20160 - z2 * 31.0 / 362880)))
    direct = z - 2.0 * np.tanh(z / 2.0)
    out = np.where(small, series, direct)
    return float(out) if out.ndim == 0 else out


def sinh_ratio(a, b):
    """``sinh(a) / sinh(b)`` for ``0 <= a <= b``, free of overflow."""
    a = np.asarray(a, dtype=float)
    return np.exp(a - b) * np.expm1(-2.0 * a) / np.expm1(-2.0 * b)


def cosh_ratio(a, b):
    """``cosh(a) / sinh(b)`` for ``0 <= a <= b``, free of overflow."""
    a = np.asarray(a, dtype=float)
    return -np.exp(a - b) * (1.0 + np.exp(-2.0 * a)) / np.expm1(-2.0 * b)


def _check_horizon(inst: VariationalInstance) -> float:
    z = inst.sqrt_rho * inst.horizon_v
    if z < DEGENERATE_SQRT_RHO_T:
        raise DegenerateHorizonError(f"sqrt(rho)*T = {z!r} below {DEGENERATE_SQRT_RHO_T}")
    return z


# -- closed form ------------------------------------------------------------

def coefficients(inst: VariationalInstance) -> QuadCoefficients:
    z = _check_horizon(inst)
    sr, lam, T, kappa = inst.sqrt_rho, inst.lambda_v, inst.horizon_v, inst.kappa_v
    th = math.tanh(z / 2.0)
    coth = 1.0 / math.tanh(z)
    g = gap(z)
    a = kappa - (coth + th * th / g) / (2.0 * lam * sr)
    b = -th / (lam * T * g)
    c = th / (2.0 * lam * g)
    det = (1.0 / (4.0 * sr * lam) - kappa * th) / (lam * T * g)
    eta = inst.drift_target
    theta = -inst.phi0_v / T
    if not b < 0.0:
        raise ArithmeticError(f"B must be negative, got {b!r}")
    if not det > 0.0:
        raise ArithmeticError(f"AB - C^2 must be positive, got {det!r}")
    return QuadCoefficients(a, b, c, eta, theta, det)


def optimal_endpoints(q: QuadCoefficients) -> tuple[float, float]:
    scale = 1.0 / (2.0 * q.det)
    x_bar = scale * (q.c_coef * q.theta - q.b_coef * q.eta)
    y_bar = scale * (q.c_coef * q.eta - q.a_coef * q.theta)
    return x_bar, y_bar


def shape_constants(inst: VariationalInstance, x: float, y: float) -> tuple[float, float, float]:
    """``(c1, c2, c3)`` of the hyperbolic profile with ``delta(0)=0``, ``delta(T)=x``, ``int delta = y``."""
    z = _check_horizon(inst)
    c3 = (inst.sqrt_rho * y - x * math.tanh(z / 2.0)) / gap(z)
    inv_sinh = -2.0 * math.exp(-z) / math.expm1(-2.0 * z)
    return (x - c3) * inv_sinh, -c3 * inv_sinh, c3


def constrained_min_value(inst: VariationalInstance, x: float, y: float) -> float:
    """Minimum of ``int (delta'-mu)^2/(2 alpha sigma^2) + delta^2/(2 Lambda)`` with
    ``delta(0)=0``, ``delta(T)=x`` and ``int delta = y``."""
    z = _check_horizon(inst)
    sr, T, mu = inst.sqrt_rho, inst.horizon_v, inst.mu_v
    asig = inst.alpha_v * inst.sigma_v**2
    quad = x * x / math.tanh(z) + (x * math.tanh(z / 2.0) - sr * y) ** 2 / gap(z)
    return mu * mu * T / (2.0 * asig) - mu * x / asig + quad / (2.0 * inst.lambda_v * sr)


def kinetic_identity(inst: VariationalInstance, x: float, y: float) -> float:
    """``rho int delta^2 + int delta'^2`` at the constrained minimizer."""
    z = _check_horizon(inst)
    sr = inst.sqrt_rho
    return sr * (x * x / math.tanh(z) + (x * math.tanh(z / 2.0) - sr * y) ** 2 / gap(z))


def solve_closed_form(inst: VariationalInstance) -> VariationalSolution:
    x_bar, y_bar = optimal_endpoints(coefficients(inst))
    c1, c2, c3 = shape_constants(inst, x_bar, y_bar)
    T, lam = inst.horizon_v, inst.lambda_v
    value = (inst.kappa_v * (inst.s0_v + x_bar) ** 2
             + (inst.phi0_v * lam - y_bar) ** 2 / (2.0 * lam * T)
             - constrained_min_value(inst, x_bar, y_bar))
    return VariationalSolution(c1, c2, c3, x_bar, y_bar, value, y_bar / T)


def _profile(sol: VariationalSolution, inst: VariationalInstance, t, derivative: bool = False):
    t = np.asarray(t, dtype=float)
    T = inst.horizon_v
    if np.any(t < 0.0) or np.any(t > T):
        raise ValueError(f"t must lie in [0, {T!r}]")
    sr = inst.sqrt_rho
    z = sr * T
    a, b = sr * t, sr * (T - t)
    if derivative:
        out = sr * ((sol.x_bar - sol.c3) * cosh_ratio(a, z) + sol.c3 * cosh_ratio(b, z))
    else:
        out = (sol.x_bar - sol.c3) * sinh_ratio(a, z) - sol.c3 * sinh_ratio(b, z) + sol.c3
    return float(out) if out.ndim == 0 else out


def evaluate_delta(sol: VariationalSolution, inst: VariationalInstance, t):
    return _profile(sol, inst, t)


def evaluate_delta_dot(sol: VariationalSolution, inst: VariationalInstance, t):
    return _profile(sol, inst, t, derivative=True)


def mean_of_optimal_delta(inst: VariationalInstance) -> float:
    z = _check_horizon(inst)
    sr, lam, T, kappa, phi0 = inst.sqrt_rho, inst.lambda_v, inst.horizon_v, inst.kappa_v, inst.phi0_v
    th = math.tanh(z / 2.0)
    num = inst.drift_target * th - (1.0 / math.tanh(z) - 2.0 * lam * sr * kappa) * phi0
    return num / (1.0 / (sr * lam) - 4.0 * kappa * th) + phi0 * lam / T


# -- discretized oracle -----------------------------------------------------

def objective(inst: VariationalInstance, traj: DiscreteTrajectory) -> float:
    """Exact objective of the piecewise-linear interpolant of ``traj``."""
    grid = np.asarray(traj.grid, dtype=float)
    d = np.asarray(traj.values, dtype=float)
    if grid.shape != d.shape or grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid and values must be 1-D arrays of equal length >= 2")
    if d[0] != 0.0:
        raise ValueError("trajectory must start at zero")
    h = np.diff(grid)
    T = grid[-1] - grid[0]
    slopes = np.diff(d) / h
    kinetic = np.sum(h * (slopes - inst.mu_v) ** 2)
    square = np.sum(h / 3.0 * (d[:-1] ** 2 + d[:-1] * d[1:] + d[1:] ** 2))
    integral = np.sum(h / 2.0 * (d[:-1] + d[1:]))
    lam = inst.lambda_v
    return float(inst.kappa_v * (inst.s0_v + d[-1]) ** 2
                 - kinetic / (2.0 * inst.alpha_v * inst.sigma_v**2)
                 + ((inst.phi0_v * lam - integral) ** 2 / T - square) / (2.0 * lam))


def discrete_quadratic(inst: VariationalInstance, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Hessian ``H`` and gradient-at-zero ``g`` of the discrete objective in the
    unknowns ``delta_1..delta_n`` (``delta_0 = 0`` is eliminated)."""
    T, lam = inst.horizon_v, inst.lambda_v
    asig = inst.alpha_v * inst.sigma_v**2
    h = T / n
    stiff = np.zeros((n, n))
    idx = np.arange(n)
    stiff[idx, idx] = 2.0
    stiff[-1, -1] = 1.0
    stiff[idx[:-1], idx[1:]] = -1.0
    stiff[idx[1:], idx[:-1]] = -1.0
    mass = np.zeros((n, n))
    mass[idx, idx] = 2.0 * h / 3.0
    mass[-1, -1] = h / 3.0
    mass[idx[:-1], idx[1:]] = h / 6.0
    mass[idx[1:], idx[:-1]] = h / 6.0
    w = np.full(n, h)
    w[-1] = h / 2.0

    H = -stiff / (asig * h) - mass / lam + np.outer(w, w) / (lam * T)
    H[-1, -1] += 2.0 * inst.kappa_v
    g = -(inst.phi0_v / T) * w
    g[-1] += 2.0 * inst.kappa_v * inst.s0_v + inst.mu_v / asig
    return H, g


def solve_discretized(inst: VariationalInstance, n: int) -> DiscreteTrajectory:
    if n < 8:
        raise ValueError(f"n must be at least 8, got {n}")
    H, g = discrete_quadratic(inst, n)
    try:
        factor = linalg.cho_factor(-H, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NonConcaveError("negated Hessian is not positive definite") from exc
    v = linalg.cho_solve(factor, g)
    grid = np.linspace(0.0, inst.horizon_v, n + 1)
    values = np.concatenate(([0.0], v))
    traj = DiscreteTrajectory(grid, values, 0.0)
    return DiscreteTrajectory(grid, values, objective(inst, traj))
