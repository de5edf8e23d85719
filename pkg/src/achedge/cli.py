"""Command-line front end.

Every command reads one JSON config (``--config``) whose ``problem`` object holds
the model parameters; flags override the run settings.  Exit status is 0 on
success, 1 when a check fails, and 2 on a config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import dual, simulate, strategy, variational, verify
from .model import ProblemError, ProblemSpec, kappa_bound, positivity_margins, validate_problem

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2
SWEEP_PARAMETERS = ("kappa", "lambda_impact", "alpha", "t_horizon")
_CONFIG_KEYS = {"problem", "paths", "steps", "seed", "quad_nodes", "threads", "out",
                "profile_points", "per_path_csv", "seed_sweep", "sweep"}
_SWEEP_KEYS = {"parameter", "start", "stop", "count", "mc"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepRange:
    parameter: str
    start: float
    stop: float
    count: int
    mc: bool = False

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count)


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    paths: int = simulate.DESK_PATHS
    steps: int = simulate.DESK_STEPS
    seed: int = 0
    quad_nodes: int = dual.DEFAULT_QUAD_NODES
    threads: int | None = None
    out: Path | None = None
    profile_points: int = 21
    per_path_csv: bool = False
    seed_sweep: int = 0
    sweep: SweepRange | None = field(default=None)


def _int(name: str, value: Any, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def _sweep(raw: Any) -> SweepRange:
    if not isinstance(raw, dict):
        raise ConfigError("sweep must be an object")
    unknown = sorted(set(raw) - _SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"unknown sweep keys: {', '.join(unknown)}")
    if raw.get("parameter") not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep parameter must be one of {', '.join(SWEEP_PARAMETERS)}")
    try:
        start, stop = float(raw["start"]), float(raw["stop"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("sweep needs numeric start and stop") from exc
    return SweepRange(raw["parameter"], start, stop, _int("sweep.count", raw.get("count"), 2),
                      bool(raw.get("mc", False)))


def load_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "problem" not in raw or not isinstance(raw["problem"], dict):
        raise ConfigError("config needs a 'problem' object")
    try:
        problem = ProblemSpec.from_dict(raw["problem"])
    except ProblemError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig(problem)
    updates: dict[str, Any] = {}
    for key in ("paths", "steps", "quad_nodes", "profile_points"):
        if key in raw:
            updates[key] = _int(key, raw[key], 2 if key == "profile_points" else 1)
    if "seed" in raw:
        updates["seed"] = _int("seed", raw["seed"], 0)
    if "seed_sweep" in raw:
        updates["seed_sweep"] = _int("seed_sweep", raw["seed_sweep"], 0)
    if raw.get("threads") is not None:
        updates["threads"] = _int("threads", raw["threads"])
    if raw.get("out") is not None:
        updates["out"] = Path(raw["out"])
    if "per_path_csv" in raw:
        updates["per_path_csv"] = bool(raw["per_path_csv"])
    if "sweep" in raw:
        updates["sweep"] = _sweep(raw["sweep"])
    return replace(cfg, **updates)


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates: dict[str, Any] = {}
    for key in ("paths", "steps", "quad_nodes", "threads", "seed_sweep"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = _int(key, value, 0 if key == "seed_sweep" else 1)
    if args.seed is not None:
        if not 0 <= args.seed < 1 << 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out"] = Path(args.out)
    if getattr(args, "per_path_csv", False):
        updates["per_path_csv"] = True
    cfg = replace(cfg, **updates)
    if not 0 <= cfg.seed < 1 << 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.quad_nodes < 3 or cfg.quad_nodes % 2 == 0:
        raise ConfigError("quad_nodes must be odd and at least 3")
    if cfg.threads is None:
        try:
            simulate.resolve_threads(None)
        except ValueError as exc:
            raise ConfigError(f"ACHEDGE_THREADS: {exc}") from exc
    return cfg


def _validated(cfg: RunConfig) -> ProblemSpec:
    try:
        return validate_problem(cfg.problem)
    except ProblemError as exc:
        raise ConfigError(str(exc)) from exc


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")


def _csv(header: list[str], rows) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")


# -- commands ---------------------------------------------------------------

def cmd_solve(cfg: RunConfig) -> int:
    p = _validated(cfg)
    inst = dual.i_instance(p)
    sol = variational.solve_closed_form(inst)
    # the last profile point sits just before maturity, where the target is pinned to zero
    t = np.linspace(0.0, p.t_horizon, cfg.profile_points)
    expected = p.s0 + p.mu * t
    target = [float(strategy.target_position(p, float(ti), si)) if ti < p.t_horizon else 0.0
              for ti, si in zip(t, expected)]
    delta = variational.evaluate_delta(sol, inst, t)
    report = {
        "initial_rate": strategy.initial_rate(p),
        "m0_hat": dual.m0_hat(p),
        "variational": sol.to_dict(),
        "target_profile": [{"t": float(a), "price": float(b), "target_position": c}
                           for a, b, c in zip(t, expected, target)],
    }
    _emit(report)
    _write(cfg.out, "target_profile.csv", _csv(["t", "price", "target_position"], zip(t, expected, target)))
    _write(cfg.out, "drift_profile.csv", _csv(["t", "delta"], zip(t, delta)))
    _write(cfg.out, "solve.json", json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    p = _validated(cfg)
    exps = simulate.loss_exponents(p, cfg.paths, cfg.steps, cfg.seed, threads=cfg.threads)
    value, std_err = simulate.certainty_equivalent(p.alpha, exps)
    est = simulate.McEstimate(value, std_err, cfg.paths, cfg.steps, cfg.seed)
    text = est.to_json()
    sys.stdout.write(text + "\n")
    _write(cfg.out, "estimate.json", text + "\n")
    _write(cfg.out, "estimates.csv", _csv(["value", "std_err", "n_paths", "n_steps", "seed"],
                                          [(est.value, est.std_err, est.n_paths, est.n_steps, est.seed)]))
    if cfg.per_path_csv:
        _write(cfg.out, "paths.csv", _csv(["path_index", "exponent"], enumerate(exps)))
    return EXIT_OK


def cmd_dual(cfg: RunConfig) -> int:
    p = _validated(cfg)
    try:
        report = dual.dual_value(p, cfg.quad_nodes)
    except dual.QuadratureError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CHECK_FAILED
    text = report.to_json()
    sys.stdout.write(text + "\n")
    _write(cfg.out, "dual.json", text + "\n")
    _write(cfg.out, "j_profile.csv", dual.j_profile_csv(p, cfg.quad_nodes))
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    vcfg = verify.VerifyConfig(paths=cfg.paths, steps=cfg.steps, seed=cfg.seed,
                               quad_nodes=cfg.quad_nodes, seed_sweep=cfg.seed_sweep,
                               threads=cfg.threads)
    results = verify.run_battery(cfg.problem, vcfg)
    payload = {"passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
    _emit(payload)
    _write(cfg.out, "verify.json", json.dumps(payload, indent=2) + "\n")
    return EXIT_OK if payload["passed"] else EXIT_CHECK_FAILED


def sweep_rows(cfg: RunConfig) -> list[dict]:
    sw = cfg.sweep
    if sw is None:
        raise ConfigError("sweep command needs a 'sweep' object in the config")
    specs = []
    for v in sw.values():
        q = cfg.problem.replace(**{sw.parameter: float(v)})
        if sw.parameter == "kappa" and not 0.0 <= q.kappa < kappa_bound(q.alpha, q.sigma, q.t_horizon):
            raise ConfigError(f"kappa sweep touches the bound at kappa={q.kappa!r}")
        try:
            specs.append(validate_problem(q))
        except ProblemError as exc:
            raise ConfigError(f"{sw.parameter}={v!r}: {exc}") from exc
    rows = []
    for v, q in zip(sw.values(), specs):
        denom, reversion = positivity_margins(q)
        row = {
            sw.parameter: float(v),
            "initial_rate": strategy.initial_rate(q),
            "target_position_0": float(strategy.target_position(q, 0.0, q.s0)),
            "i_star": variational.solve_closed_form(dual.i_instance(q)).value,
            "dual_total": dual.dual_value(q, cfg.quad_nodes).total,
            "denominator_margin": denom,
            "reversion_margin": reversion,
        }
        if sw.mc:
            est = simulate.mc_certainty_equivalent(q, cfg.paths, cfg.steps, cfg.seed, threads=cfg.threads)
            row["ce"] = est.value
            row["ce_std_err"] = est.std_err
        rows.append(row)
    return rows


def cmd_sweep(cfg: RunConfig) -> int:
    rows = sweep_rows(cfg)
    header = list(rows[0])
    text = _csv(header, ([r[k] for k in header] for r in rows))
    sys.stdout.write(text)
    _write(cfg.out, "sweep.csv", text)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "dual": cmd_dual,
            "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="achedge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="JSON config file")
        cmd.add_argument("--paths", type=int)
        cmd.add_argument("--steps", type=int)
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--quad-nodes", dest="quad_nodes", type=int)
        cmd.add_argument("--threads", type=int, help="worker count (default: $ACHEDGE_THREADS or CPU count)")
        cmd.add_argument("--out", help="directory for JSON/CSV outputs")
        if name == "simulate":
            cmd.add_argument("--per-path-csv", dest="per_path_csv", action="store_true")
        if name == "verify":
            cmd.add_argument("--seed-sweep", dest="seed_sweep", type=int,
                             help="run the martingale check over this many seeds")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = _apply_flags(load_config(text), args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, OSError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except simulate.McOverflowError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
