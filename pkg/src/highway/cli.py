"""Command line entry point.

Exit codes: 0 success, 1 invalid input (config, MDP file or CSV) or a failed
experiment cell, 2 a ``--check`` assertion failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .harness.checks import CHECKS, judge_toy, toy_medians
from .harness.config import ConfigError, ExperimentConfig
from .harness.presets import PRESETS
from .harness.report import format_table, report
from .harness.runner import run
from .harness.schema import SchemaError, render
from .mdp import MdpValidationError

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 1, 2


class CheckFailed(Exception):
    pass


def int_list(text: str) -> list[int]:
    """``"1,2,5"`` or ``"1-10"`` or a mix such as ``"1-3,8"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


def name_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _env_spec(value: str) -> dict:
    return {"file": value} if value.endswith(".json") or Path(value).exists() else {"preset": value}


def _emit(rows, out: str | None) -> None:
    if out:
        return  # run() already wrote the file
    sys.stdout.write(render(rows))


def cmd_fixed_point(args, kind="fixed_point"):
    spec = {"operators": args.operator, "depths": args.n, "tol": args.tol,
            "depth_mode": args.depth_mode}
    if args.policies:
        spec["policies"] = args.policies
    if args.alpha is not None:
        spec["alpha"] = args.alpha
    if args.gate_threshold is not None:
        spec["gate_threshold"] = args.gate_threshold
    cfg = ExperimentConfig(kind, args.experiment or kind.replace("_", "-"), _env_spec(args.env), spec,
                           out=args.out)
    rows = run(cfg)
    _emit(rows, args.out)
    if args.check and not all(r.flag for r in rows):
        raise CheckFailed("some fixed-point solves did not converge")


def cmd_gate_trace(args):
    cfg = ExperimentConfig("gate_trace", args.experiment or "gate-trace", _env_spec(args.env),
                           {"depth": args.n}, out=args.out)
    _emit(run(cfg), args.out)


def cmd_multiroom(args):
    cfg = ExperimentConfig("multiroom", args.experiment or "multiroom", {},
                           {"rooms": args.rooms, "room_size": args.room_size,
                            "algorithms": args.algorithms}, out=args.out)
    rows = run(cfg)
    _emit(rows, args.out)
    if args.check:
        it = {(r.algorithm, int(r.x)): r.y for r in rows if r.metric == "iterations"}
        bad = [r for r in rows if r.algorithm == "highway_value_iteration" and not r.flag]
        for rooms in args.rooms:
            vi, hvi = it.get(("value_iteration", rooms)), it.get(("highway_value_iteration", rooms))
            if vi is not None and hvi is not None and hvi > vi:
                bad.append(rooms)
        if bad:
            raise CheckFailed(f"Highway VI check failed: {bad}")


def cmd_toy(args):
    cfg = ExperimentConfig("toy_tasks", args.experiment or f"toy-{args.task}", {},
                           {"task": args.task, "delays": args.delay, "agents": args.agents,
                            "budget": args.budget, "trace": args.trace},
                           seeds=list(range(args.seeds)), out=args.out, workers=args.workers)
    rows = run(cfg)
    _emit(rows, args.out)
    if args.check:
        ok, reasons = judge_toy(toy_medians(rows), args.delay)
        if not ok:
            raise CheckFailed("; ".join(reasons))


def cmd_properties(args):
    names = sorted(CHECKS) if args.suite == "all" else [args.suite]
    failed = []
    for name in names:
        if name not in CHECKS:
            raise ConfigError("suite", f"unknown suite {name!r}; expected one of {sorted(CHECKS)} or 'all'")
        result = CHECKS[name]()
        print(result.line())
        if not result.passed:
            failed.append(name)
    if args.check and failed:
        raise CheckFailed(f"failed: {failed}")


def cmd_run(args):
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {args.preset!r}")
        doc = dict(PRESETS[args.preset])
    else:
        doc = ExperimentConfig.load(args.config).to_dict()
    if args.workers:
        doc["workers"] = args.workers
    cfg = ExperimentConfig.from_dict(doc)
    rows = run(cfg, args.out)
    _emit(rows, args.out or cfg.out)
    if args.check and not all(r.flag for r in rows if r.metric == "check"):
        raise CheckFailed("acceptance check failed")


def cmd_report(args):
    summary = report(args.paths, args.out_dir)
    print(format_table(summary))


def cmd_presets(args):
    for name in sorted(PRESETS):
        print(f"{name:28} {PRESETS[name]['kind']}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="highway", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, check=True):
        sp.add_argument("--out", help="CSV output path (default: stdout)")
        sp.add_argument("--experiment", help="experiment id (keys the random streams)")
        if check:
            sp.add_argument("--check", action="store_true", help="exit 2 if the claim fails")

    for name, kind in (("fixed-point", "fixed_point"), ("convergence", "convergence_iters")):
        sp = sub.add_parser(name, help=f"{kind.replace('_', ' ')} experiment")
        sp.add_argument("--env", default="threefork", help="preset name or MDP JSON file")
        sp.add_argument("--operator", type=name_list, default=["highway_generalized"])
        sp.add_argument("--n", type=int_list, default=list(range(1, 11)))
        sp.add_argument("--tol", type=float, default=1e-10)
        sp.add_argument("--depth-mode", choices=("single", "range"), default="single")
        sp.add_argument("--policies", type=name_list)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--gate-threshold", type=int)
        common(sp)
        sp.set_defaults(func=lambda a, k=kind: cmd_fixed_point(a, k))

    sp = sub.add_parser("gate-trace", help="per-iteration gate choices")
    sp.add_argument("--env", default="threefork")
    sp.add_argument("--n", type=int, default=10)
    common(sp, check=False)
    sp.set_defaults(func=cmd_gate_trace)

    sp = sub.add_parser("multiroom", help="VI / PI / Highway VI on Multi-Room")
    sp.add_argument("--rooms", type=int_list, default=[2, 4, 6])
    sp.add_argument("--room-size", type=int, default=5)
    sp.add_argument("--algorithms", type=name_list,
                    default=["value_iteration", "policy_iteration", "highway_value_iteration"])
    common(sp)
    sp.set_defaults(func=cmd_multiroom)

    sp = sub.add_parser("toy", help="delayed-reward toy tasks")
    sp.add_argument("--task", choices=("choice", "traceback"), required=True)
    sp.add_argument("--delay", type=int_list, default=[6, 12, 18])
    sp.add_argument("--agents", type=name_list,
                    default=["highway_q", "q_lambda", "sarsa_lambda", "monte_carlo"])
    sp.add_argument("--seeds", type=int, default=20, help="number of seeds (0..k-1)")
    sp.add_argument("--budget", type=int, default=2000)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--trace", action="store_true", help="also log every greedy evaluation")
    common(sp)
    sp.set_defaults(func=cmd_toy)

    sp = sub.add_parser("properties", help="run an acceptance property suite")
    sp.add_argument("--suite", default="all", help="acceptance-NN or 'all'")
    sp.add_argument("--check", action="store_true")
    sp.set_defaults(func=cmd_properties)

    sp = sub.add_parser("run", help="run a config file or named preset")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("config", nargs="?")
    g.add_argument("--preset")
    sp.add_argument("--out")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--check", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="aggregate CSVs into a summary and plot data")
    sp.add_argument("paths", nargs="+")
    sp.add_argument("--out-dir", default="report")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("presets", help="list named configs")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore")
    try:
        args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, MdpValidationError, SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as exc:  # failed cells; partial results were already written
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
