"""Command-line front end.

Subcommands:
  run       simulate one episode and export its trajectory log
  batch     run a seeded batch and export the aggregate statistics
  validate  parse and check a scenario file
  oracle    independent numerical checks (lq: Riccati benchmark,
            fd: finite-difference derivative consistency)

Exit codes: 0 success, 2 scenario validation/parse failure, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import oracles
from .errors import (
    DegenerateWeightsError,
    HierPiError,
    NonFiniteError,
    RankDeficientError,
    ScenarioParseError,
    ScenarioValidationError,
)
from .harness import (
    export_log,
    export_stats,
    load_scenario,
    run_batch,
    run_episode,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _add_scenario_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario file (JSON)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hierpi", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one episode")
    _add_scenario_arg(run_p)
    run_p.add_argument("--mode", choices=["pd", "hybrid"], required=True)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--format", choices=["csv", "json", "both"], default="both")
    run_p.add_argument("--workers", type=int, default=1,
                       help="rollout worker threads inside the sampler")

    batch_p = sub.add_parser("batch", help="run a seeded batch")
    _add_scenario_arg(batch_p)
    batch_p.add_argument("--mode", choices=["pd", "hybrid"], required=True)
    batch_p.add_argument("--runs", type=int, default=None,
                         help="number of runs (default: scenario seeds.count)")
    batch_p.add_argument("--base-seed", type=int, default=None)
    batch_p.add_argument("--out", required=True)
    batch_p.add_argument("--save-runs", action="store_true",
                         help="also export every per-run trajectory CSV")
    batch_p.add_argument("--success-distance", type=float, default=0.3)
    batch_p.add_argument("--workers", type=int, default=None)

    val_p = sub.add_parser("validate", help="check a scenario file")
    _add_scenario_arg(val_p)

    orc_p = sub.add_parser("oracle", help="independent numerical checks")
    orc_sub = orc_p.add_subparsers(dest="oracle", required=True)
    lq_p = orc_sub.add_parser("lq", help="sampled control vs Riccati feedback")
    lq_p.add_argument("--samples", type=int, default=20000)
    lq_p.add_argument("--seeds", type=int, default=10)
    lq_p.add_argument("--base-seed", type=int, default=0)
    lq_p.add_argument("--tolerance", type=float, default=0.1,
                      help="allowed relative error of the seed-mean estimate")
    fd_p = orc_sub.add_parser("fd", help="finite-difference derivative check")
    fd_p.add_argument("--states", type=int, default=100)
    fd_p.add_argument("--step", type=float, default=1e-5)
    fd_p.add_argument("--seed", type=int, default=0)
    fd_p.add_argument("--tolerance", type=float, default=1e-4)
    return p


def _cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    log = run_episode(scn, args.mode, args.seed, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format in ("csv", "both"):
        export_log(log, out / "trajectory.csv", "csv")
    if args.format in ("json", "both"):
        export_log(log, out / "trajectory.json", "json")
    for key, val in log.summary().items():
        print(f"{key}: {val}")
    print(f"wrote {out}/trajectory.{args.format if args.format != 'both' else '{csv,json}'}")
    return EXIT_OK


def _cmd_batch(args) -> int:
    scn = load_scenario(args.scenario)
    stats, logs = run_batch(
        scn, args.mode, n_runs=args.runs, base_seed=args.base_seed,
        workers=args.workers, success_distance=args.success_distance,
        keep_logs=args.save_runs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_stats(stats, out / "stats.csv", "csv")
    export_stats(stats, out / "stats.json", "json")
    if args.save_runs:
        for i, lg in enumerate(logs):
            if lg is not None:
                export_log(lg, out / f"run_{i:03d}.csv", "csv")
    print(f"runs: {stats.n_runs}, failures: {len(stats.failures)}")
    print(f"success (< {stats.success_distance}): {stats.success_count}/{stats.n_runs}")
    print(f"final goal distance: mean {stats.final_goal_distances.mean():.4f}")
    if stats.min_clearances.size and np.all(np.isfinite(stats.min_clearances)):
        print(f"min obstacle clearance over batch: {stats.min_clearances.min():.4f}")
    print(f"wrote {out}/stats.csv and {out}/stats.json")
    return EXIT_OK


def _cmd_validate(args) -> int:
    scn = load_scenario(args.scenario)
    defaults = sorted(k for k, v in scn.provenance.items() if v == "default")
    print(f"{args.scenario}: OK ({scn.model}, T={scn.duration}, dt={scn.dt}, "
          f"{len(scn.tasks)} tasks)")
    if defaults:
        print("defaulted fields: " + ", ".join(defaults))
    return EXIT_OK


def _cmd_oracle_lq(args) -> int:
    inst = oracles.LqInstance()
    states = [-2.0, -1.0, 0.5, 1.0, 2.0]
    res = oracles.lq_benchmark(inst, states, [args.samples], args.seeds,
                               base_seed=args.base_seed)
    mean = res["means"][args.samples]
    worst = 0.0
    print(f"{'x0':>6} {'riccati':>10} {'sampled':>10} {'rel err':>9}")
    for x0, star, est in zip(res["states"], res["oracle"], mean):
        rel = abs(est - star) / abs(star)
        worst = max(worst, rel)
        print(f"{x0:>6.2f} {star:>10.5f} {est:>10.5f} {rel:>8.2%}")
    if worst > args.tolerance:
        print(f"FAIL: worst relative error {worst:.2%} exceeds {args.tolerance:.0%}")
        return EXIT_NUMERICAL
    print(f"OK: worst relative error {worst:.2%} within {args.tolerance:.0%}")
    return EXIT_OK


def _cmd_oracle_fd(args) -> int:
    res = oracles.derivative_suite(args.states, args.step, args.seed)
    bad = False
    for name, row in res.items():
        worst = max(row["max_err_sigma_dot"], row["max_err_sigma_ddot"])
        status = "ok" if worst < args.tolerance else "FAIL"
        bad = bad or status == "FAIL"
        print(f"{name:>16}: max rel err sigma_dot {row['max_err_sigma_dot']:.2e}, "
              f"sigma_ddot {row['max_err_sigma_ddot']:.2e} [{status}]")
    if bad:
        print(f"FAIL: a task exceeded {args.tolerance:.0e}")
        return EXIT_NUMERICAL
    print(f"OK: all tasks within {args.tolerance:.0e}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "batch":
            return _cmd_batch(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "oracle":
            if args.oracle == "lq":
                return _cmd_oracle_lq(args)
            return _cmd_oracle_fd(args)
        raise AssertionError("unreachable")
    except (ScenarioParseError, ScenarioValidationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NonFiniteError, RankDeficientError, DegenerateWeightsError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except HierPiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
