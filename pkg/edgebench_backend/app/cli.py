"""Command-line front end: run, sweep, solve, presets.

Exit codes: 0 success, 1 other domain error, 2 file not found,
3 malformed scenario, 4 state space too large, 5 solved policy mismatch.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from . import experiments, mdp
from .errors import EdgebenchError, MalformedConfig, SpecMismatch, StateSpaceTooLarge
from .scenario import ValidatedConfig, load_scenario
from .schemas import MdpSpec, PolicyId, RewardKind

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_FOUND = 2
EXIT_MALFORMED = 3
EXIT_TOO_LARGE = 4
EXIT_MISMATCH = 5


def _params(pairs: Sequence[str]) -> Dict[str, str]:
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise MalformedConfig("policy_params", f"expected KEY=VALUE, got {pair!r}")
        params[key] = value
    return params


def _coerce(value: str):
    try:
        return float(value)
    except ValueError:
        return value


def _scenario(args) -> ValidatedConfig:
    if args.preset:
        name = args.preset
        if experiments.PRESETS.get(name) and experiments.PRESETS[name].kind == "sweep":
            name = f"{name}-scenario"
        return load_scenario(experiments.preset_path(name))
    if not args.scenario:
        raise MalformedConfig("", "one of --scenario or --preset is required")
    return load_scenario(args.scenario)


def _overrides(cfg: ValidatedConfig, args) -> ValidatedConfig:
    changes = {}
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if args.policy is not None:
        changes["policy_id"] = PolicyId(args.policy)
        changes["policy_params"] = {}
    if args.param:
        params = dict(changes.get("policy_params", cfg.scenario.policy_params))
        params.update({k: _coerce(v) for k, v in _params(args.param).items()})
        changes["policy_params"] = params
    return cfg.with_scenario(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _overrides(_scenario(args), args)
    summary, trace = experiments.run_once(
        cfg,
        lambda_multiplier=args.lambda_multiplier,
        horizon=args.horizon,
        keep_trace=args.trace is not None,
    )
    experiments.write_summary_csv([summary], args.out or sys.stdout)
    if args.trace is not None:
        experiments.write_trace_csv(trace, args.trace)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.preset:
        info = experiments.PRESETS.get(args.preset)
        if info is not None and info.kind != "sweep":
            raise MalformedConfig(
                "preset", f"{args.preset!r} is a scenario preset; sweep needs a sweep preset"
            )
        spec, base = experiments.load_preset(args.preset)
    elif args.sweep:
        spec, base = experiments.load_sweep(args.sweep)
    else:
        raise MalformedConfig("", "one of --sweep or --preset is required")

    results = experiments.run_sweep(
        base, spec.lambda_multipliers, spec.policies, spec.seeds, horizon=args.horizon
    )
    out_dir = Path(args.out or spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "summary.csv"
    experiments.write_sweep_csv(results, base, out_path)
    failed = sum(1 for result in results if result.error)
    print(f"{len(results)} runs, {failed} failed -> {out_path}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _scenario(args)
    try:
        spec = MdpSpec(
            base=cfg.scenario,
            q_max=args.q_max,
            k_max=args.k_max,
            gamma=args.gamma,
            epsilon=args.epsilon,
            reward_kind=RewardKind(args.reward),
        )
    except ValidationError as exc:
        first = exc.errors()[0]
        raise MalformedConfig(".".join(str(p) for p in first["loc"]), first["msg"]) from exc
    solved, _ = mdp.solve(spec)
    mdp.save_solved_policy(solved, args.out)
    print(
        f"states={solved.space.count} actions={solved.actions.count} "
        f"iterations={solved.iterations} residual={solved.residual:.3e} -> {args.out}"
    )
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.name:
        print(experiments.preset_path(args.name).read_text(encoding="utf-8"))
        return EXIT_OK
    for info in experiments.list_presets():
        print(f"{info.name:28s} {info.kind:8s} {info.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgebench", description="MEC task offloading simulator"
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="Run one trajectory")
    run.add_argument("--scenario", help="Scenario JSON file")
    run.add_argument("--preset", help="Bundled preset scenario")
    run.add_argument("--seed", type=int, help="Override rng_seed")
    run.add_argument("--policy", choices=[p.value for p in PolicyId])
    run.add_argument(
        "--param", action="append", default=[], help="Policy parameter KEY=VALUE"
    )
    run.add_argument("--horizon", type=int, help="Override the number of slots")
    run.add_argument(
        "--lambda", dest="lambda_multiplier", type=float, default=1.0,
        help="Arrival rate multiplier",
    )
    run.add_argument("--out", help="Summary CSV path (default: stdout)")
    run.add_argument("--trace", help="Write the per-slot trace CSV here")
    run.set_defaults(func=cmd_run)

    sweep = verbs.add_parser("sweep", help="Arrival-rate sweep over policies and seeds")
    sweep.add_argument("--sweep", help="Sweep JSON file")
    sweep.add_argument("--preset", help="Bundled preset sweep, e.g. case-study")
    sweep.add_argument("--horizon", type=int, help="Override the number of slots")
    sweep.add_argument("--out", help="Output directory (default: from the sweep file)")
    sweep.set_defaults(func=cmd_sweep)

    solve = verbs.add_parser("solve", help="Solve the truncated MDP and save the table")
    solve.add_argument("--scenario", help="Scenario JSON file")
    solve.add_argument("--preset", help="Bundled preset scenario")
    solve.add_argument("--q-max", type=int, default=2)
    solve.add_argument("--k-max", type=int, default=2)
    solve.add_argument("--gamma", type=float, default=0.95)
    solve.add_argument("--epsilon", type=float, default=1e-6)
    solve.add_argument(
        "--reward", choices=[r.value for r in RewardKind], default=RewardKind.COMPLETIONS.value
    )
    solve.add_argument("--out", required=True, help="Where to write the solved table")
    solve.set_defaults(func=cmd_solve)

    presets = verbs.add_parser("presets", help="List bundled presets")
    presets.add_argument("name", nargs="?", help="Print this preset")
    presets.set_defaults(func=cmd_presets)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=os.getenv("EDGEBENCH_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        logging.error("file not found: %s", exc.filename or exc)
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except MalformedConfig as exc:
        logging.error("malformed configuration: %s", exc)
        print(f"error: malformed configuration: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except StateSpaceTooLarge as exc:
        logging.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except SpecMismatch as exc:
        logging.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except EdgebenchError as exc:
        logging.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
