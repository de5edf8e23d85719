"""Problem parameterization for exponential-utility hedging with linear temporary impact."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping

import numpy as np

POSITIVITY_GRID_POINTS = 10_001


class ProblemError(ValueError):
    """Raised when a problem parameterization violates a model invariant."""


@dataclass(frozen=True)
class ProblemSpec:
    s0: float
    sigma: float
    mu: float
    lambda_impact: float
    alpha: float
    kappa: float
    t_horizon: float
    phi0: float

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProblemSpec":
        names = [f.name for f in fields(cls)]
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise ProblemError(f"unknown problem keys: {', '.join(unknown)}")
        missing = [n for n in names if n not in data]
        if missing:
            raise ProblemError(f"missing problem keys: {', '.join(missing)}")
        values = {}
        for n in names:
            v = data[n]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ProblemError(f"{n} must be a number, got {v!r}")
            values[n] = float(v)
        return cls(**values)

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ProblemError("problem JSON must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    def replace(self, **changes: float) -> "ProblemSpec":
        return ProblemSpec(**{**self.to_dict(), **changes})


@dataclass(frozen=True)
class DerivedConstants:
    rho: float
    sqrt_rho: float
    kappa_bound: float


def kappa_bound(alpha: float, sigma: float, t_horizon: float) -> float:
    return 1.0 / (2.0 * alpha * sigma**2 * t_horizon)


def derived_constants(p: ProblemSpec) -> DerivedConstants:
    rho = p.alpha * p.sigma**2 / p.lambda_impact
    return DerivedConstants(rho=rho, sqrt_rho=math.sqrt(rho),
                            kappa_bound=kappa_bound(p.alpha, p.sigma, p.t_horizon))


def positivity_margins(p: ProblemSpec, n_points: int = POSITIVITY_GRID_POINTS) -> tuple[float, float]:
    """Smallest values over t in [0, T) of the feedback-law denominator and the
    mean-reversion coefficient ``coth(sqrt(rho)(T-t)) - 2 Lambda sqrt(rho) kappa``."""
    sr = derived_constants(p).sqrt_rho
    t = np.linspace(0.0, p.t_horizon, n_points)[:-1]
    tau = sr * (p.t_horizon - t)
    denom = 1.0 / sr - 4.0 * p.kappa * p.lambda_impact * np.tanh(tau / 2.0)
    reversion = 1.0 / np.tanh(tau) - 2.0 * p.lambda_impact * sr * p.kappa
    return float(denom.min()), float(reversion.min())


def validate_problem(raw: ProblemSpec) -> ProblemSpec:
    for name in ("s0", "sigma", "mu", "lambda_impact", "alpha", "kappa", "t_horizon", "phi0"):
        if not math.isfinite(getattr(raw, name)):
            raise ProblemError(f"{name} must be finite")
    for name in ("sigma", "lambda_impact", "alpha", "t_horizon"):
        if getattr(raw, name) <= 0.0:
            raise ProblemError(f"{name} must be positive, got {getattr(raw, name)!r}")
    bound = kappa_bound(raw.alpha, raw.sigma, raw.t_horizon)
    if not 0.0 <= raw.kappa < bound:
        raise ProblemError(f"kappa must lie in [0, {bound!r}), got {raw.kappa!r}")
    denom, reversion = positivity_margins(raw)
    if not denom > 0.0:
        raise ProblemError(f"feedback denominator not positive on [0, T): min {denom!r}")
    if not reversion > 0.0:
        raise ProblemError(f"mean-reversion coefficient not positive on [0, T): min {reversion!r}")
    return raw
