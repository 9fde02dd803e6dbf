"""Command-line interface.

Subcommands: run (one seed, full log), sweep (regret scaling over horizons),
check-feasibility (preflight only), benchmark (J* for an instance), estimate
(estimation-error scaling study). Exit codes: 0 success, 2 preflight
failure, 3 runtime infeasibility.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .config import load_instance
from .harness import PreflightError


def _add_common(p):
    p.add_argument("--config", required=True,
                   help="config JSON path or builtin name (scalar, twostate)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output file path")
    p.add_argument("--format", default=None, choices=["csv", "json-summary"])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="safelqr")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="one full adaptive run")
    _add_common(p_run)
    p_run.add_argument("--horizon-exp", type=int, default=None,
                       help="override total horizon to 2^k (5 doubling episodes)")

    p_sweep = sub.add_parser("sweep", help="regret scaling over horizons")
    _add_common(p_sweep)
    p_sweep.add_argument("--horizon-exp", type=int, nargs="+",
                         default=[12, 13, 14, 15, 16])
    p_sweep.add_argument("--seeds", type=int, default=20)
    p_sweep.add_argument("--episodes", type=int, default=5)

    p_chk = sub.add_parser("check-feasibility", help="preflight only")
    _add_common(p_chk)

    p_bench = sub.add_parser("benchmark", help="benchmark cost J*")
    _add_common(p_bench)
    p_bench.add_argument("--H-bench", type=int, default=None)
    p_bench.add_argument("--mc-steps", type=int, default=0)

    p_est = sub.add_parser("estimate", help="estimation-error scaling study")
    _add_common(p_est)
    p_est.add_argument("--horizon-exp", type=int, nargs="+",
                       default=[10, 11, 12, 13, 14, 15, 16])
    p_est.add_argument("--etas", type=float, nargs="+",
                       default=[0.025, 0.05, 0.1, 0.2])
    p_est.add_argument("--seeds", type=int, default=30)

    args = ap.parse_args(argv)
    instance = load_instance(args.config)

    if args.cmd == "check-feasibility":
        schedule = harness.build_schedule(instance)
        report = harness.preflight(instance, schedule)
        print(json.dumps({
            "ok": report.ok, "failures": report.failures(),
            "eq13_slacks": report.eq13_slacks.tolist(),
            "floor_met": report.floor_met,
            "bundle0": report.details["bundle0"],
        }, indent=1, default=str))
        return 0 if report.ok else 2

    if args.cmd == "run":
        schedule = None
        if args.horizon_exp is not None:
            T = 2 ** args.horizon_exp
            schedule = harness.build_schedule(instance, T1=T // 16,
                                              num_episodes=5)
        try:
            log = harness.simulate(instance, seed=args.seed, schedule=schedule)
        except PreflightError as err:
            print(f"preflight failed: {err.report.failures()}", file=sys.stderr)
            return 2
        sv, av = log.violations()
        print(f"run complete: T={log.T} cost={log.cost.sum():.6g} "
              f"state_violations={sv} action_violations={av} "
              f"coverage_event={log.truth_in_all_sets} "
              f"infeasible_events={log.infeasible_events}")
        if args.out:
            fmt = args.format or "csv"
            if fmt == "csv":
                harness.export(log, args.out, "csv")
            else:
                sched = log.schedule
                bench = harness.benchmark_cost(
                    instance.model, 2 * sched.max_H, instance.constraints,
                    instance.cert, instance.Q, instance.R, instance.Sigma_w)
                harness.export(harness.compute_regret(log, bench.J_star),
                               args.out, "json-summary")
        return 3 if log.infeasible_events else 0

    if args.cmd == "benchmark":
        schedule = harness.build_schedule(instance)
        H_bench = args.H_bench or 2 * schedule.max_H
        res = harness.benchmark_cost(instance.model, H_bench,
                                     instance.constraints, instance.cert,
                                     instance.Q, instance.R, instance.Sigma_w,
                                     mc_steps=args.mc_steps, mc_seed=args.seed)
        out = {"J_star": res.J_star, "H_bench": H_bench}
        if args.mc_steps:
            out.update(mc_mean=res.mc_mean, mc_stderr=res.mc_stderr)
        print(json.dumps(out))
        return 0

    if args.cmd == "sweep":
        try:
            result = harness.regret_sweep(instance, args.horizon_exp,
                                          seeds_per_T=args.seeds,
                                          base_seed=args.seed,
                                          episodes=args.episodes)
        except PreflightError as err:
            print(f"preflight failed: {err.report.failures()}", file=sys.stderr)
            return 2
        infeasible = 0
        for row in result["rows"]:
            print(f"T={row['T']:>7d} median_regret={row['median_regret']:.6g} "
                  f"violations=({row['state_violations']},{row['action_violations']}) "
                  f"coverage={row['coverage']:.2f}")
        for reports in result["reports"].values():
            infeasible += sum(1 for r in reports
                              if any(s["infeasible_events"] for s in r.episode_summaries))
        if result["fit"]:
            print(f"fitted exponent {result['fit'].slope:.3f} "
                  f"(theoretical 2/3 = {2/3:.3f}), J*={result['J_star']:.6g}")
        if args.out:
            with open(args.out, "w") as f:
                json.dump({"rows": result["rows"],
                           "slope": result["fit"].slope if result["fit"] else None,
                           "J_star": result["J_star"]}, f, indent=1)
        return 3 if infeasible else 0

    if args.cmd == "estimate":
        res = harness.estimation_study(
            instance, T_grid=[2 ** k for k in args.horizon_exp],
            eta_grid=args.etas, n_seeds=args.seeds, base_seed=args.seed)
        for T, v in res["median_vs_T"]:
            print(f"T={T:>7d} median_error={v:.6g}")
        print(f"slope vs T: {res['fit_T'].slope:.3f} (theory -0.5)")
        for eta, v in res["median_vs_eta"]:
            print(f"eta={eta:.4g} median_error={v:.6g}")
        print(f"slope vs eta: {res['fit_eta'].slope:.3f} (theory -1.0)")
        if args.out:
            with open(args.out, "w") as f:
                json.dump({"median_vs_T": res["median_vs_T"],
                           "median_vs_eta": res["median_vs_eta"],
                           "slope_T": res["fit_T"].slope,
                           "slope_eta": res["fit_eta"].slope}, f, indent=1)
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
