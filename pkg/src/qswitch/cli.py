"""Command-line front end: ``qswitch solve|simulate|sweep|inspect-policy``.

Configuration is a JSON object whose keys are the fields of
:class:`RunConfig`.  Values are resolved as flags > config file > defaults;
unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import _kernels
from .mdp import Distill, ModelParams, Swap, build_model, format_state, parse_state
from .planner import (
    ConvergenceError,
    PlannerConfig,
    dump_policy,
    iter_policy_lines,
    parse_policy,
    policy_iteration,
    read_policy_header,
)
from .simulator import MODES, SimConfig, simulate

log = logging.getLogger("qswitch")

POLICY_MODES = ("distill", "no_distill")
DEFAULT_SWEEP = (0.70, 0.75, 0.80, 0.85, 0.90, 0.95)
SWEEP_HEADER = ["f_th", "policy_mode", "seed", "steps", "success_count", "throughput", "avg_fidelity", "jitter", "error"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # model
    lambda1: float = 0.7
    lambda2: float = 0.7
    m_star: int = 3
    f_star: float = 0.85
    L: int = 3
    f_th: float = 0.9
    allow_distill: bool = True
    # planner
    gamma: float = 0.9
    eval_tolerance: float = 1e-10
    max_eval_sweeps: int = 100_000
    max_improvement_rounds: int = 1_000
    tie_tolerance: float = 1e-8
    # simulation
    seed: int = 0
    steps: int = 10_000
    mode: str = "exact"
    # sweep
    sweep: tuple[float, ...] = DEFAULT_SWEEP
    policy_modes: tuple[str, ...] = POLICY_MODES
    jobs: int = 1
    # outputs
    out: str | None = None
    trace: str | None = None

    def model_params(self, f_th: float | None = None, allow_distill: bool | None = None) -> ModelParams:
        return ModelParams(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            m_star=self.m_star,
            f_star=self.f_star,
            L=self.L,
            f_th=self.f_th if f_th is None else f_th,
            allow_distill=self.allow_distill if allow_distill is None else allow_distill,
        )

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(
            gamma=self.gamma,
            eval_tolerance=self.eval_tolerance,
            max_eval_sweeps=self.max_eval_sweeps,
            max_improvement_rounds=self.max_improvement_rounds,
            tie_tolerance=self.tie_tolerance,
        )

    def sim_config(self, seed: int | None = None) -> SimConfig:
        return SimConfig(seed=self.seed if seed is None else seed, steps=self.steps, mode=self.mode)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT = {"m_star", "L", "max_eval_sweeps", "max_improvement_rounds", "seed", "steps", "jobs"}
_FLOAT = {"lambda1", "lambda2", "f_star", "f_th", "gamma", "eval_tolerance", "tie_tolerance"}


def _coerce(key: str, value: Any) -> Any:
    try:
        if key in _INT:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if key in _FLOAT:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if key == "allow_distill":
            if not isinstance(value, bool):
                raise TypeError
            return value
        if key == "sweep":
            return tuple(float(v) for v in value)
        if key == "policy_modes":
            return tuple(str(v) for v in value)
        if key in ("mode", "out", "trace"):
            return None if value is None else str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: invalid value {value!r}") from None
    raise ConfigError(f"unknown configuration key {key!r}")


def _validate(cfg: RunConfig) -> RunConfig:
    for name in ("lambda1", "lambda2"):
        v = getattr(cfg, name)
        if not (0.0 <= v <= 1.0):
            raise ConfigError(f"{name}: {v!r} is not a probability in [0, 1]")
    if not (0.0 <= cfg.f_th <= 1.0):
        raise ConfigError(f"f_th: {cfg.f_th!r} must lie in [0, 1]")
    if cfg.L < 1:
        raise ConfigError(f"L: {cfg.L!r} must be >= 1")
    if cfg.m_star < 0:
        raise ConfigError(f"m_star: {cfg.m_star!r} must be >= 0")
    if cfg.m_star > 0 and not (0.0 < cfg.f_star < 1.0):
        raise ConfigError(f"f_star: {cfg.f_star!r} must lie in (0, 1)")
    if not (0.0 <= cfg.gamma < 1.0):
        raise ConfigError(f"gamma: {cfg.gamma!r} must lie in [0, 1)")
    if cfg.steps < 1:
        raise ConfigError(f"steps: {cfg.steps!r} must be >= 1")
    if not (0 <= cfg.seed < 2**64):
        raise ConfigError(f"seed: {cfg.seed!r} must be a 64-bit unsigned integer")
    if cfg.mode not in MODES:
        raise ConfigError(f"mode: {cfg.mode!r} must be one of {MODES}")
    if cfg.jobs < 1:
        raise ConfigError(f"jobs: {cfg.jobs!r} must be >= 1")
    if any(not (0.0 <= v <= 1.0) for v in cfg.sweep):
        raise ConfigError("sweep: every threshold must lie in [0, 1]")
    if any(b <= a for a, b in zip(cfg.sweep, cfg.sweep[1:])):
        raise ConfigError("sweep: thresholds must be strictly increasing")
    if not cfg.policy_modes or any(m not in POLICY_MODES for m in cfg.policy_modes):
        raise ConfigError(f"policy_modes: must be a non-empty subset of {POLICY_MODES}")
    if len(set(cfg.policy_modes)) != len(cfg.policy_modes):
        raise ConfigError("policy_modes: duplicate entries")
    if cfg.eval_tolerance <= 0 or cfg.tie_tolerance < 0:
        raise ConfigError("eval_tolerance must be > 0 and tie_tolerance >= 0")
    if cfg.max_eval_sweeps < 1 or cfg.max_improvement_rounds < 1:
        raise ConfigError("max_eval_sweeps and max_improvement_rounds must be >= 1")
    return cfg


def parse_config(
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
    base: dict[str, Any] | None = None,
) -> RunConfig:
    """Resolve defaults, ``base``, the JSON file at ``path``, then ``overrides``."""
    values: dict[str, Any] = {k: _coerce(k, v) for k, v in (base or {}).items()}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must contain a JSON object")
        for key, value in doc.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown configuration key {key!r}")
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
        if value is not None:
            values[key] = _coerce(key, value)
    return _validate(RunConfig(**values))


# --------------------------------------------------------------------------
# stages


def _policy_header(cfg: RunConfig, params: ModelParams, iterations: int, residual: float) -> dict[str, Any]:
    header: dict[str, Any] = {"format": "qswitch-policy/1"}
    for k in ("lambda1", "lambda2", "m_star", "f_star", "L", "f_th", "allow_distill"):
        header[k] = getattr(params, k)
    header.update(
        gamma=cfg.gamma,
        eval_tolerance=cfg.eval_tolerance,
        tie_tolerance=cfg.tie_tolerance,
        iterations=iterations,
        bellman_residual=f"{residual:.3e}",
    )
    return header


def run_solve(cfg: RunConfig) -> str:
    """Solve for the optimal policy and return the policy artifact text."""
    params = cfg.model_params()
    model = build_model(params)
    result = policy_iteration(model, cfg.planner_config())
    buf = io.StringIO()
    dump_policy(result.policy, buf, _policy_header(cfg, params, result.iterations, result.residual))
    return buf.getvalue()


def _metrics_row(report) -> dict[str, Any]:
    return {
        "steps": report.steps,
        "success_count": report.success_count,
        "throughput": report.throughput,
        "avg_fidelity": report.avg_fidelity,
        "jitter": report.jitter,
    }


def run_simulate(cfg: RunConfig, policy_path: str | None = None) -> dict[str, Any]:
    params = cfg.model_params()
    model = build_model(params)
    if policy_path is None:
        policy = policy_iteration(model, cfg.planner_config()).policy
    else:
        with open(policy_path) as fp:
            policy = parse_policy(fp, model)
    sim = cfg.sim_config()
    if cfg.trace:
        with open(cfg.trace, "w") as fp:
            report = simulate(policy, params, sim, trace=fp)
    else:
        report = simulate(policy, params, sim)
    return {"f_th": params.f_th, "allow_distill": params.allow_distill, "seed": sim.seed, "mode": sim.mode, **_metrics_row(report)}


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def _sweep_cell(args: tuple[RunConfig, float, str, int]) -> list[str]:
    cfg, f_th, mode, seed = args
    row = {"f_th": f_th, "policy_mode": mode, "seed": seed, "steps": cfg.steps}
    try:
        params = cfg.model_params(f_th=f_th, allow_distill=(mode == "distill"))
        policy = policy_iteration(build_model(params), cfg.planner_config()).policy
        report = simulate(policy, params, cfg.sim_config(seed))
        row.update(_metrics_row(report), error=None)
    except Exception as exc:  # recorded in the row; the sweep continues
        row.update(success_count=None, throughput=None, avg_fidelity=None, jitter=None, error=f"{type(exc).__name__}: {exc}")
    return [_fmt(row[k]) for k in SWEEP_HEADER]


def sweep_cells(cfg: RunConfig) -> list[tuple[RunConfig, float, str, int]]:
    cells = []
    for f_th in cfg.sweep:
        for mode in cfg.policy_modes:
            cells.append((cfg, f_th, mode, cfg.seed + len(cells)))
    return cells


def run_sweep(cfg: RunConfig) -> str:
    """Solve and simulate every (threshold, policy mode) cell; return CSV text."""
    cells = sweep_cells(cfg)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    writer.writerows(rows)
    return buf.getvalue()


def run_inspect(path: str, state: str | None = None) -> str:
    with open(path) as fp:
        lines = fp.readlines()
    header = read_policy_header(lines)
    entries = list(iter_policy_lines(lines))
    if state is not None:
        target = parse_state(state)
        for s, action in entries:
            if s == target:
                return f"{format_state(s)} -> {action}\n"
        raise KeyError(f"state {format_state(target)} not in policy")
    kinds = Counter("swap" if isinstance(a, Swap) else "distill" if isinstance(a, Distill) else "wait" for _, a in entries)
    out = [f"{k}: {v}" for k, v in header.items()]
    out.append(f"states: {len(entries)}")
    out.extend(f"{k}: {kinds.get(k, 0)}" for k in ("wait", "swap", "distill"))
    if "m_star" in header and "L" in header:
        params = ModelParams(
            m_star=int(header["m_star"]),
            L=int(header["L"]),
            f_star=float(header.get("f_star", 0.85)),
            allow_distill=header.get("allow_distill", "True") == "True",
        )
        model = build_model(params)
        policy = parse_policy(lines, model)
        out.append(f"total: {policy.is_total}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--f-th", dest="f_th", type=float, help="end-to-end fidelity threshold")
    common.add_argument("--no-distill", dest="allow_distill", action="store_const", const=False, default=None)
    common.add_argument("--seed", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--trace", help="write per-step JSON records here (simulate)")
    common.add_argument("--lambda1", type=float)
    common.add_argument("--lambda2", type=float)
    common.add_argument("--m-star", dest="m_star", type=int)
    common.add_argument("--f-star", dest="f_star", type=float)
    common.add_argument("--L", dest="L", type=int, help="buffer capacity per client")
    common.add_argument("--gamma", type=float)
    common.add_argument("--sweep", help="comma-separated thresholds, e.g. 0.7,0.8,0.9")
    common.add_argument("--policy-modes", dest="policy_modes", help="comma-separated subset of distill,no_distill")
    common.add_argument("--jobs", type=int, help="parallel sweep workers")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qswitch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="compute and write an optimal policy")
    p_sim = sub.add_parser("simulate", parents=[common], help="simulate a policy and report metrics")
    p_sim.add_argument("--policy", help="policy file from `solve` (default: solve first)")
    sub.add_parser("sweep", parents=[common], help="solve+simulate over thresholds and policy modes")
    p_ins = sub.add_parser("inspect-policy", parents=[common], help="summarize a policy file")
    p_ins.add_argument("policy_file")
    p_ins.add_argument("--state", help='look up one state, e.g. "A=[0,2] B=[1]"')
    return parser


def _overrides(ns: argparse.Namespace) -> dict[str, Any]:
    keys = ("f_th", "allow_distill", "seed", "steps", "mode", "out", "trace", "lambda1", "lambda2",
            "m_star", "f_star", "L", "gamma", "jobs")
    out = {k: getattr(ns, k) for k in keys}
    if ns.sweep is not None:
        out["sweep"] = [x for x in ns.sweep.split(",") if x.strip()]
    if ns.policy_modes is not None:
        out["policy_modes"] = [x.strip() for x in ns.policy_modes.split(",") if x.strip()]
    return out


_MODEL_KEYS = ("lambda1", "lambda2", "m_star", "f_star", "L", "f_th", "allow_distill")


def policy_model_settings(path: str | Path) -> dict[str, Any]:
    """Model parameters recorded in a policy file header (empty if it has none)."""
    with open(path) as fp:
        header = read_policy_header(fp)
    out: dict[str, Any] = {}
    for key in _MODEL_KEYS:
        if key not in header:
            continue
        raw = header[key]
        try:
            out[key] = raw == "True" if key == "allow_distill" else (int(raw) if key in _INT else float(raw))
        except ValueError:
            raise ConfigError(f"policy header {key}: invalid value {raw!r}") from None
    return out


def _config_for_policy(ns: argparse.Namespace, policy_path: str) -> RunConfig:
    """Take model parameters from the policy header; reject explicit settings that contradict it."""
    recorded = policy_model_settings(policy_path)
    cfg = parse_config(ns.config, _overrides(ns), base=recorded)
    for key, value in recorded.items():
        if getattr(cfg, key) != value:
            raise ConfigError(f"{key}: {getattr(cfg, key)!r} conflicts with {value!r} recorded in {policy_path}")
    return cfg


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def main(argv: Sequence[str] | None = None) -> int:
    ns = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(name)s: %(message)s")
    log.debug("kernel backend: %s", _kernels.BACKEND)
    stage = ns.command
    try:
        if ns.command == "simulate" and ns.policy is not None:
            cfg = _config_for_policy(ns, ns.policy)
        else:
            cfg = parse_config(ns.config, _overrides(ns))
        if ns.command == "solve":
            _emit(run_solve(cfg), cfg.out)
        elif ns.command == "simulate":
            _emit(json.dumps(run_simulate(cfg, ns.policy), indent=2) + "\n", cfg.out)
        elif ns.command == "sweep":
            _emit(run_sweep(cfg), cfg.out)
        else:
            _emit(run_inspect(ns.policy_file, ns.state), cfg.out)
    except ConvergenceError as exc:
        print(f"qswitch: {stage} failed: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"qswitch: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"qswitch: {stage} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
