"""Command-line front-end: run experiments, map equilibria, sweep parameters.

Subcommands: run, equilibria, sweep, validate.  Any config key can be
overridden with a dotted flag (``--designer.lambda 0.1``) or ``--set``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import (apply_override, build_run, build_spec, load_config,
                     sweep_values, validate)
from .designer import DesignProblem, design
from .errors import AidLabError, ConfigError, UnknownParameter, UnsupportedDimension
from .game import enumerate_equilibria, write_basin_csv, zero_alpha
from .loop import diagnostics, run as run_loop


def _collect_overrides(cfg: dict, pairs) -> dict:
    for dotted, value in pairs:
        cfg = apply_override(cfg, dotted, value)
    return cfg


def _parse_rest(rest) -> list:
    """Turn trailing ``--a.b value`` tokens into override pairs."""
    pairs = []
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument: {tok}")
        if "=" in tok:
            dotted, value = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise ConfigError(f"missing value for override {tok}")
            dotted, value = tok[2:], rest[i + 1]
            i += 2
        pairs.append((dotted, value))
    return pairs


def _write_outputs(trace, out_dir: Path, cfg: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    trace.write_csv(out_dir / "trace.csv")
    trace.write_learner_csv(out_dir / "learner.csv")
    trace.write_design_csv(out_dir / "design.csv")
    if cfg["output"]["components"] and trace.components is not None:
        trace.write_components_csv(out_dir / "components.csv")
    trace.write_summary(out_dir / "summary.json")


def cmd_run(args, rest) -> int:
    cfg = load_config(args.config)
    explicit = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        explicit.append(tuple(item.split("=", 1)))
    cfg = _collect_overrides(cfg, _parse_rest(rest) + explicit)
    run_config = build_run(cfg)
    trace = run_loop(run_config, config_echo=cfg)
    out_dir = Path(args.out or cfg["output"]["dir"])
    _write_outputs(trace, out_dir, cfg)
    diag = diagnostics(trace)
    with open(out_dir / "diagnostics.json", "w") as fh:
        json.dump(_jsonable(diag.as_dict()), fh, indent=2, sort_keys=True)
    print(f"run complete: {trace.iterations} iterations -> {out_dir}")
    if trace.iterations:
        print(f"  final |x - x_d| = {trace.xd_err[-1]:.6g}"
              f"  final |v - v_d| = {trace.v_err[-1]:.6g}"
              f"  design failures = {trace.design_failures}")
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def cmd_equilibria(args, rest) -> int:
    cfg = load_config(args.config)
    cfg = _collect_overrides(cfg, _parse_rest(rest))
    spec = build_spec(cfg)
    if spec.n != 2:
        raise UnsupportedDimension("basin maps are two-dimensional")
    if spec.true_theta is None:
        raise ConfigError("equilibrium maps need true parameters")
    if args.alpha is not None:
        flat = [float(v) for v in args.alpha.split(",")]
        alpha = []
        pos = 0
        for i in range(spec.n):
            s = spec.incentive[i].dimension
            alpha.append(np.array(flat[pos:pos + s]))
            pos += s
        if pos != len(flat):
            raise ConfigError("--alpha length does not match incentive stacks")
        alpha = tuple(alpha)
    elif args.design:
        problem = DesignProblem(
            mode="nash-p2" if cfg["designer"]["kind"] == "p2" else "nash-p1",
            x_d=np.asarray(cfg["run"]["x_d"], dtype=float),
            v_d=np.asarray(cfg["run"]["v_d"], dtype=float),
            theta_hat=spec.true_theta,
            eps_margin=float(cfg["designer"]["eps_margin"]),
            lam_reg=float(cfg["designer"]["lambda"]))
        alpha = design(spec, problem).alpha
    else:
        alpha = zero_alpha(spec)
    reports, labels, starts, ends = enumerate_equilibria(
        spec, spec.true_theta, alpha, args.grid)
    out = Path(args.out or "basin.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_basin_csv(out, spec, reports, labels, starts, ends)
    stable = [r for r in reports if r.is_stable]
    print(f"{len(reports)} first-order points, {len(stable)} stable -> {out}")
    for r in reports:
        tag = "stable" if r.is_stable else ("nash" if r.is_differential_nash
                                            else "unstable")
        print(f"  {np.array2string(r.point, precision=4)}  |omega|="
              f"{r.omega_norm:.2e}  {tag}  basin={r.basin_size}")
    return 0


def _sweep_one(payload):
    idx, cfg = payload
    run_config = build_run(cfg)
    trace = run_loop(run_config, config_echo=cfg)
    summary = trace.summary()
    return idx, summary


def cmd_sweep(args, rest) -> int:
    cfg = load_config(args.config)
    cfg = _collect_overrides(cfg, _parse_rest(rest))
    values = sweep_values(args.param, args.values.split(","))
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else \
        [int(cfg["run"]["seed"])]
    jobs = []
    for value in values:
        for seed in seeds:
            c = copy.deepcopy(cfg)
            c = apply_override(c, args.param, str(value))
            c = apply_override(c, "run.seed", str(seed))
            jobs.append((value, seed, c))
    out_dir = Path(args.out or "sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    payloads = list(enumerate(c for _, _, c in jobs))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = dict(pool.map(_sweep_one, payloads))
    else:
        results = dict(_sweep_one(p) for p in payloads)
    rows = []
    for idx, (value, seed, c) in enumerate(jobs):
        summary = results[idx]
        rows.append({
            "param": args.param, "value": value, "seed": seed,
            "final_xd_err": summary["final_xd_err"],
            "final_v_err": summary["final_v_err"],
            "final_theta_err_max": max(summary["final_theta_err"])
            if summary["final_theta_err"] else float("nan"),
            "final_alpha_norm": summary["final_alpha_norm"],
            "design_failures": summary["design_failures"],
            "descent_violations": summary["descent_violations"],
        })
        sub = out_dir / f"{args.param.replace('.', '_')}_{value}_seed{seed}.json"
        with open(sub, "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
    agg = out_dir / "sweep.csv"
    with open(agg, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"{len(rows)} runs -> {agg}")
    return 0


def cmd_validate(args, rest) -> int:
    cfg = load_config(args.config)
    cfg = _collect_overrides(cfg, _parse_rest(rest))
    build_run(cfg)
    print(json.dumps(_jsonable(cfg), indent=2, sort_keys=True))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aidlab",
        description="Adaptive incentive design simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one adaptive run")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--out", default=None, help="output directory")
    p_run.add_argument("--set", action="append", default=None,
                       metavar="KEY=VALUE")
    p_run.set_defaults(func=cmd_run)

    p_eq = sub.add_parser("equilibria", help="grid-map the equilibria")
    p_eq.add_argument("config")
    p_eq.add_argument("--grid", type=int, default=60)
    p_eq.add_argument("--alpha", default=None,
                      help="comma-separated incentive parameters")
    p_eq.add_argument("--design", action="store_true",
                      help="design incentives at the true parameters first")
    p_eq.add_argument("-o", "--out", default=None)
    p_eq.set_defaults(func=cmd_equilibria)

    p_sw = sub.add_parser("sweep", help="run a parameter sweep")
    p_sw.add_argument("config")
    p_sw.add_argument("--param", required=True)
    p_sw.add_argument("--values", required=True)
    p_sw.add_argument("--seeds", default=None)
    p_sw.add_argument("--jobs", type=int, default=1)
    p_sw.add_argument("-o", "--out", default=None)
    p_sw.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="validate and echo a config")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        return args.func(args, rest)
    except (ConfigError, UnknownParameter, UnsupportedDimension) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AidLabError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
