"""Command-line front end: ``relaypower sweep | single | validate``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidInputError, RelayPowerError
from .experiments import (
    METHODS,
    ScenarioConfig,
    aggregate,
    build_problem,
    curve_csv,
    iter_trials,
    trial_rng,
)
from .relay import Budgets
from .sca import optimize, uniform_allocation

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("relaypower")


class ConfigError(Exception):
    pass


def parse_value(text: str):
    """Read a ``--set`` value: JSON if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | None, overrides: list[str] = (), **flags) -> ScenarioConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        data[key.strip()] = parse_value(value)
    data.update({k: v for k, v in flags.items() if v is not None})
    try:
        return ScenarioConfig.from_dict(data)
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def config_hash(config: ScenarioConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_sweep(args) -> int:
    config = load_config(args.config, args.set, seed=args.seed, trials=args.trials)
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
    started = _now()
    results = []
    try:
        for chunk in iter_trials(config, methods, args.workers):
            results.extend(chunk)
            log.info("completed %d/%d trials", chunk[-1].trial + 1, config.trials)
    except RelayPowerError as exc:
        done = results[-1].trial + 1 if results else 0
        print(f"error: sweep failed after {done} completed trials: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    curve = aggregate(results, config.p_t_grid, methods)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="ascii") as fh:
        fh.write(curve_csv(curve))
    manifest_path = out.with_suffix(".manifest.json")
    manifest = {
        "config_hash": config_hash(config),
        "config": config.to_dict(),
        "methods": list(methods),
        "seed": config.seed,
        "code_version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": {"csv": str(out), "manifest": str(manifest_path)},
        "excluded_trials": {f"{p}:{m}": t for (p, m), t in curve.excluded.items()},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {out} ({len(curve.points)} rows) and {manifest_path}")
    return EXIT_OK


def cmd_single(args) -> int:
    config = load_config(args.config, args.set, seed=args.seed)
    p_t = args.p_t if args.p_t is not None else config.p_t_grid[-1]
    problem = build_problem(config, trial_rng(config, args.trial))
    budgets = Budgets(p_t, config.p_r)
    alloc, trace = optimize(problem, budgets, config.sca_options)
    uniform = uniform_allocation(problem.channel_powers, budgets)
    duals = [(float("nan"), float("nan"))] + trace.duals
    record = {
        "p_t": p_t,
        "p_r": config.p_r,
        "trial": args.trial,
        "alpha": alloc.alpha.tolist(),
        "beta": alloc.beta.tolist(),
        "sensor_power": alloc.sensor_power(problem.channel_powers),
        "relay_power": alloc.relay_power(),
        "iterations": [
            {"k": s.iteration, "objective": s.objective, "mse": problem.residual_trace + s.objective,
             "lambda_t": lt, "lambda_r": lr}
            for s, (lt, lr) in zip(trace.states, duals)
        ],
        "converged": trace.converged,
        "stop_reason": trace.stop_reason,
        "mse": problem.mse(alloc),
        "uniform_mse": problem.mse(uniform),
    }
    if args.json:
        print(_dumps(record))
        return EXIT_OK
    np.set_printoptions(precision=6, suppress=False, linewidth=100)
    print(f"P_T = {p_t:g}   P_R = {config.p_r:g}   channels = {problem.channel_count}   trial = {args.trial}")
    print(f"{'k':>4} {'objective':>14} {'mse':>14} {'lambda_T':>13} {'lambda_R':>13}")
    for row in record["iterations"]:
        print(f"{row['k']:>4} {row['objective']:>14.8g} {row['mse']:>14.8g} "
              f"{row['lambda_t']:>13.6g} {row['lambda_r']:>13.6g}")
    print(f"stop: {trace.stop_reason} (converged={trace.converged})")
    print("alpha =", alloc.alpha)
    print("beta  =", alloc.beta)
    print(f"sensor power {record['sensor_power']:.10g}, relay power {record['relay_power']:.10g}")
    print(f"final MSE {record['mse']:.10g}  (uniform allocation {record['uniform_mse']:.10g})")
    return EXIT_OK


def _dumps(record) -> str:
    # JSON has no NaN; the first iteration has no multipliers
    def clean(v):
        if isinstance(v, float) and not np.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, list):
            return [clean(x) for x in v]
        return v
    return json.dumps(clean(record), allow_nan=False)


def cmd_validate(args) -> int:
    from .validation import run_suite

    results = run_suite(full=args.full)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  result  seconds  detail")
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.1f}  {r.detail}")
    failed = [r for r in results if not r.passed]
    for r in failed:
        for inst in r.failures:
            print(f"  {r.name} failing instance: {inst}")
    return EXIT_RUNTIME if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaypower", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults used when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key; VALUE is parsed as JSON when possible")
        p.add_argument("--seed", type=int)

    sw = sub.add_parser("sweep", help="Monte Carlo MSE-vs-budget sweep to CSV")
    common(sw)
    sw.add_argument("--out", required=True, help="CSV output path; manifest written alongside")
    sw.add_argument("--trials", type=int)
    sw.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    sw.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    sw.set_defaults(func=cmd_sweep)

    si = sub.add_parser("single", help="run the allocator on one channel realization")
    common(si)
    si.add_argument("--p-t", type=float, help="sensor budget (default: largest grid value)")
    si.add_argument("--trial", type=int, default=0, help="trial index selecting the realization")
    si.add_argument("--json", action="store_true")
    si.set_defaults(func=cmd_single)

    va = sub.add_parser("validate", help="run the oracle-backed self-checks")
    scale = va.add_mutually_exclusive_group()
    scale.add_argument("--quick", action="store_true", default=True)
    scale.add_argument("--full", action="store_true")
    va.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RelayPowerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
