"""``stability-lab`` command line."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from .harness import TASKS, TRANSFORMS, ExperimentConfig, load_config, run_acceptance, run_experiment, sweep, write_report
from .reporting import all_passed, rows_to_csv
from .tape import DEFAULT_MAX_ENUM_BITS


def _json_arg(text: str):
    """Inline JSON or @path to a JSON file."""
    if text.startswith("@"):
        with open(text[1:]) as fh:
            return json.load(fh)
    return json.loads(text)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--master-seed", type=int, default=0, help="seed every random stream derives from")
    p.add_argument("--max-enum-bits", type=int, default=DEFAULT_MAX_ENUM_BITS, help="cap on exhaustively enumerated tape bits")
    p.add_argument("--out", help="write <out>.csv and <out>.json")


def _task_args(p: argparse.ArgumentParser, default_task: Optional[str] = None) -> None:
    p.add_argument("--task", default=default_task, required=default_task is None, choices=sorted(TASKS))
    p.add_argument("--task-params", type=_json_arg, default={}, metavar="JSON")
    p.add_argument("--trials", type=int, default=20_000)


def _emit(rows, args) -> int:
    sys.stdout.write(rows_to_csv(rows))
    if getattr(args, "out", None):
        write_report(rows, args.out)
    return 0 if all_passed(rows) else 1


def _chain(args, transforms=(), verifiers=()) -> int:
    cfg = ExperimentConfig(
        seed=args.master_seed,
        id=args.command,
        task={"id": args.task, "params": args.task_params},
        transforms=list(transforms),
        verifiers=list(verifiers),
        trials=args.trials,
        caps={"max_enum_bits": args.max_enum_bits},
    )
    return _emit(run_experiment(cfg, write=False), args)


def _threshold(args) -> dict:
    return {k: v for k, v in (("min", args.min), ("max", args.max)) if v is not None}


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg = cfg.model_copy(update={"output": args.out})
    rows = run_experiment(cfg)
    sys.stdout.write(rows_to_csv(rows))
    return 0 if all_passed(rows) else 1


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg = cfg.model_copy(update={"output": args.out})
    rows = sweep(cfg, _json_arg(args.grid) if not args.grid.endswith(".json") else _json_arg("@" + args.grid))
    sys.stdout.write(rows_to_csv(rows))
    return 0 if all_passed(rows) else 1


def cmd_estimate(metric: str):
    def run(args) -> int:
        return _chain(args, verifiers=[{"name": metric, "params": _threshold(args)}])

    return run


def cmd_find_hh(args) -> int:
    return _chain(args, verifiers=[{"name": "heavy_hitters", "params": {"eta": args.eta}}])


def cmd_audit_dp(args) -> int:
    params = {"epsilon": args.epsilon, "delta": args.delta, "universe": args.universe}
    if args.users:
        params["users"] = args.users
    return _chain(args, verifiers=[{"name": "audit_dp", "params": params}])


def cmd_run_transform(args) -> int:
    steps = [{"name": args.transform, "params": args.params}]
    return _chain(args, steps, [{"name": "bits", "params": {}}, {"name": args.verify, "params": _threshold(args)}])


def cmd_stab2dp(args) -> int:
    params = {"epsilon": args.epsilon, "delta": args.delta, "eta": args.eta, "beta": args.beta, "users": args.users, "list_runs": args.list_runs, "dummy": args.dummy, "c": args.gap_constant}
    audit = {"epsilon": args.epsilon, "delta": args.delta, "universe": args.universe, "users": args.users}
    return _chain(args, [{"name": "stab2dp", "params": params}], [{"name": "bits", "params": {}}, {"name": "audit_dp", "params": audit}])


def cmd_dp2stab(args) -> int:
    params = {"epsilon": args.epsilon, "delta": args.delta, "users": args.users}
    return _chain(args, [{"name": "dp2stab", "params": params}], [{"name": "bits", "params": {}}, {"name": "global_stability", "params": _threshold(args)}])


def cmd_check_pg(args) -> int:
    params = {"epsilon": args.epsilon, "delta": args.delta, "beta": args.beta, "samples": args.samples}
    return _chain(args, verifiers=[{"name": "perfect_generalization", "params": params}])


def cmd_pac(args) -> int:
    params = {"trials": args.trials, "alpha": args.alpha, "beta": args.beta, "rho": args.rho, "domain": args.domain, "noise": args.noise}
    cfg = ExperimentConfig(seed=args.master_seed, id="pac-experiment", study="agnostic-pac", params=params)
    return _emit(run_experiment(cfg, write=False), args)


def cmd_acceptance(args) -> int:
    results = run_acceptance(args.master_seed, args.only, determinism=not args.no_determinism, output=args.out)
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stability-lab", description="Random-bit metering and verification for stability transforms.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a config over a parameter grid")
    p.add_argument("config")
    p.add_argument("--grid", required=True, help="grid JSON file or inline JSON mapping dotted paths to value lists")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    for name, metric, text in (
        ("estimate-rep", "replicability", "shared-tape replicability"),
        ("estimate-glob", "global_stability", "two-run collision probability"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        _task_args(p)
        p.add_argument("--min", type=float)
        p.add_argument("--max", type=float)
        p.set_defaults(func=cmd_estimate(metric))

    p = sub.add_parser("find-hh", help="list heavy hitters of the output law")
    _common(p)
    _task_args(p)
    p.add_argument("--eta", type=float, required=True)
    p.set_defaults(func=cmd_find_hh)

    p = sub.add_parser("audit-dp", help="exact DP audit over all neighboring datasets")
    _common(p)
    _task_args(p, "dp-selection")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--users", type=int, help="audit user-level neighbors with this many users")
    p.add_argument("--universe", type=_json_arg, default=[0, 1, 2], metavar="JSON")
    p.set_defaults(func=cmd_audit_dp)

    p = sub.add_parser("run-transform", help="apply one transform and measure the result")
    _common(p)
    _task_args(p)
    p.add_argument("--transform", required=True, choices=sorted(TRANSFORMS))
    p.add_argument("--params", type=_json_arg, default={}, metavar="JSON")
    p.add_argument("--verify", default="replicability", choices=("replicability", "global_stability", "confidence"))
    p.add_argument("--min", type=float)
    p.add_argument("--max", type=float)
    p.set_defaults(func=cmd_run_transform)

    p = sub.add_parser("stab2dp", help="stable-to-private pipeline with an exact user-level audit")
    _common(p)
    _task_args(p, "identity")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--users", type=int, default=3)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--list-runs", type=int, default=3)
    p.add_argument("--dummy", type=int, default=0)
    p.add_argument("--gap-constant", type=float, default=4.0)
    p.add_argument("--universe", type=_json_arg, default=[0, 1], metavar="JSON")
    p.set_defaults(func=cmd_stab2dp)

    p = sub.add_parser("dp2stab", help="extract a deterministic stable algorithm from a private one")
    _common(p)
    _task_args(p, "xor-mechanism")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=1 / 16)
    p.add_argument("--users", type=int, default=2)
    p.add_argument("--min", type=float)
    p.add_argument("--max", type=float)
    p.set_defaults(func=cmd_dp2stab)

    p = sub.add_parser("check-pg", help="empirical perfect-generalization check")
    _common(p)
    _task_args(p, "xor-mechanism")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(func=cmd_check_pg)

    p = sub.add_parser("pac-experiment", help="replicable agnostic learner on thresholds")
    _common(p)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--domain", type=int, default=16)
    p.add_argument("--noise", default="0.1")
    p.set_defaults(func=cmd_pac)

    p = sub.add_parser("acceptance", help="run the acceptance criteria, one line each")
    p.add_argument("--master-seed", type=int, default=2024)
    p.add_argument("--only", type=int, nargs="*")
    p.add_argument("--no-determinism", action="store_true", help="skip the byte-identical re-run check")
    p.add_argument("--out", help="directory for per-criterion reports")
    p.set_defaults(func=cmd_acceptance)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
