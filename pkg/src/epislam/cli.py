"""Command-line entry point: scenario execution, metric emission, benchmarks.

Commands:
    infer         run a scenario with a fixed trajectory, write metric files
    plan          run a planner-driven scenario, additionally write the
                  chosen trajectory and the planning trace
    bench-entropy sweep simplex dimension and compare Dirichlet/LG fitting
                  and entropy computations

All value outputs are formatted with 12 significant digits and are
byte-identical across re-runs with the same manifest and seed; files whose
content is measured wall-clock time (timing.csv, *_time.csv) are exempt by
nature.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import planning, sim
from .errors import ConfigurationError, EpislamError
from .simplex import (
    GaussianParams,
    dirichlet_entropy,
    dirichlet_fit,
    gaussian_fit,
    inv_logit,
    lg_entropy_lower,
    lg_entropy_numeric,
    lg_entropy_upper,
)

FMT = "{:.12g}"


def _fmt(value) -> str:
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return FMT.format(value)


def _write_csv(path: Path, header: list, rows: list) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_scenario(path: str) -> sim.Scenario:
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"scenario file not found: {path}")
    return sim.scenario_from_json(p.read_text(encoding="utf-8"))


def _apply_overrides(scenario: sim.Scenario, args) -> sim.Scenario:
    from dataclasses import replace

    out = scenario
    if args.seed is not None:
        out = replace(out, seed=args.seed)
    if args.w is not None:
        out = replace(out, w_count=args.w)
    return out


def _planner_spec(scenario: sim.Scenario, args) -> sim.PlannerSpec | None:
    base = scenario.planner
    if args.reward is None and base is None:
        return None
    family_map = {"dir": "dirichlet", "lg": "lg", "lg-ub": "lg-upper", "lg-lb": "lg-lower"}
    reward = args.reward or (base.reward if base else "r1")
    family = family_map.get(args.family, args.family) if args.family else (
        base.family if base else "dirichlet"
    )
    return sim.PlannerSpec(
        reward=reward,
        family=family,
        r_max=base.r_max if base else 5.0,
        horizon=args.horizon or (base.horizon if base else 5),
        budget=args.budget or (base.budget if base else 200),
        exploration_c=base.exploration_c if base else 2.0,
        n_samples=base.n_samples if base else 1,
    )


def _emit_run(out_dir: Path, tag: str, result: sim.RunResult) -> dict:
    records = result.records
    n_obj = len(result.scenario.objects)
    msde_rows, entropy_rows, timing_rows = [], [], []
    for rec in records:
        for oid in range(n_obj):
            msde_rows.append([rec.step, oid, rec.object_msde[oid]])
            entropy_rows.append([rec.step, oid, rec.object_entropy[oid]])
        msde_rows.append([rec.step, "avg", rec.avg_msde])
        entropy_rows.append([rec.step, "sum", rec.sum_entropy])
        timing_rows.append([rec.step, rec.wall_seconds])
    _write_csv(out_dir / f"msde{tag}.csv", ["step", "object", "msde"], msde_rows)
    _write_csv(out_dir / f"entropy{tag}.csv", ["step", "object", "entropy"], entropy_rows)
    _write_csv(out_dir / f"timing{tag}.csv", ["step", "seconds"], timing_rows)
    return {
        "engine": result.engine,
        "seed": result.scenario.seed,
        "steps": result.scenario.steps,
        "final_avg_msde": records[-1].avg_msde,
        "final_sum_entropy": records[-1].sum_entropy,
        "final_object_msde": {str(k): v for k, v in records[-1].object_msde.items()},
    }


def cmd_infer(args) -> int:
    scenario = _apply_overrides(_load_scenario(args.scenario), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for rep in range(args.reps):
        from dataclasses import replace

        s = replace(scenario, seed=scenario.seed + rep)
        result = sim.run_scenario(s, args.engine)
        tag = f"_rep{rep}" if args.reps > 1 else ""
        summaries.append(_emit_run(out_dir, tag, result))
    doc = {
        "command": "infer",
        "engine": args.engine,
        "scenario": scenario.name,
        "reps": args.reps,
        "runs": summaries,
        "final_avg_msde": summaries[-1]["final_avg_msde"],
        "mean_final_avg_msde": sum(s["final_avg_msde"] for s in summaries) / len(summaries),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return 0


def cmd_plan(args) -> int:
    scenario = _apply_overrides(_load_scenario(args.scenario), args)
    planner = _planner_spec(scenario, args)
    if planner is None:
        raise ConfigurationError("plan requires a reward spec (--reward or scenario planner)")
    reward_spec = planning.RewardSpec(kind=planner.reward, r_max=planner.r_max,
                                      family=planner.family)
    planning.validate_engine_reward(args.engine, reward_spec)
    from dataclasses import replace

    scenario = replace(scenario, planner=planner, actions=())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    traces = []
    for rep in range(args.reps):
        s = replace(scenario, seed=scenario.seed + rep)
        result = sim.run_scenario(s, args.engine)
        tag = f"_rep{rep}" if args.reps > 1 else ""
        summaries.append(_emit_run(out_dir, tag, result))
        traj_rows = [
            [rec.step, rec.true_pose[0], rec.true_pose[1], rec.true_pose[2], rec.action_index]
            for rec in result.records
        ]
        _write_csv(out_dir / f"trajectory{tag}.csv",
                   ["step", "x", "y", "theta", "action_index"], traj_rows)
        traces.append(
            {
                "seed": s.seed,
                "chosen_actions": [rec.action_index for rec in result.records[1:]],
                "final_sum_entropy": result.records[-1].sum_entropy,
            }
        )
    doc = {
        "command": "plan",
        "engine": args.engine,
        "reward": planner.reward,
        "family": planner.family,
        "scenario": scenario.name,
        "reps": args.reps,
        "runs": summaries,
    }
    (out_dir / "summary.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "plan_trace.json").write_text(
        json.dumps(traces, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return 0


def cmd_bench_entropy(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng_root = np.random.SeedSequence(args.seed if args.seed is not None else 0)
    fit_rows, ent_time_rows, value_rows = [], [], []
    for m in range(2, 11):
        rng = np.random.default_rng(np.random.SeedSequence((args.seed or 0, m)))
        d = m - 1
        mean = rng.uniform(-2.0, 2.0, size=d)
        a = rng.standard_normal((d, d))
        cov = a @ a.T / d + 0.5 * np.eye(d)
        chol = np.linalg.cholesky(cov)
        logits = mean + rng.standard_normal((1000, d)) @ chol.T
        probs = np.vstack([inv_logit(v) for v in logits])

        t0 = time.perf_counter()
        dirp = dirichlet_fit(probs)
        t_fit_dir = time.perf_counter() - t0
        t0 = time.perf_counter()
        gauss = gaussian_fit(logits)
        t_fit_lg = time.perf_counter() - t0

        t0 = time.perf_counter()
        h_dir = dirichlet_entropy(dirp)
        t_ent_dir = time.perf_counter() - t0
        t0 = time.perf_counter()
        h_lg = lg_entropy_numeric(gauss, 10_000, np.random.default_rng((args.seed or 0) + m))
        t_ent_lg = time.perf_counter() - t0
        t0 = time.perf_counter()
        h_ub = lg_entropy_upper(gauss)
        t_ent_ub = time.perf_counter() - t0
        h_lb = lg_entropy_lower(gauss)

        fit_rows.append([m, t_fit_dir, t_fit_lg])
        ent_time_rows.append([m, t_ent_dir, t_ent_lg, t_ent_ub])
        value_rows.append([m, h_dir, h_lg, h_ub, h_lb])
    _write_csv(out_dir / "fit_time.csv", ["m", "dirichlet_s", "lg_s"], fit_rows)
    _write_csv(out_dir / "entropy_time.csv", ["m", "dirichlet_s", "lg_numeric_s", "lg_bound_s"],
               ent_time_rows)
    _write_csv(out_dir / "entropy_value.csv",
               ["m", "dirichlet", "lg_numeric", "lg_upper", "lg_lower"], value_rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epislam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        if scenario_required:
            p.add_argument("--scenario", required=True, help="scenario JSON path")
            p.add_argument("--engine", choices=sim.ENGINES, default="mh")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--reps", type=int, default=1)

    p_inf = sub.add_parser("infer", help="run inference on a fixed trajectory")
    common(p_inf)
    p_inf.add_argument("--w", type=int, default=None, help="override the cloud size")

    p_plan = sub.add_parser("plan", help="run a planner-driven scenario")
    common(p_plan)
    p_plan.add_argument("--w", type=int, default=None)
    p_plan.add_argument("--reward", choices=["r1", "r2"], default=None)
    p_plan.add_argument("--family", choices=["dir", "lg", "lg-ub", "lg-lb"], default=None)
    p_plan.add_argument("--horizon", type=int, default=None)
    p_plan.add_argument("--budget", type=int, default=None)

    p_bench = sub.add_parser("bench-entropy", help="Dirichlet vs LG comparison sweep")
    common(p_bench, scenario_required=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "infer":
            if args.reps < 1:
                raise ConfigurationError("reps must be at least 1")
            return cmd_infer(args)
        if args.command == "plan":
            if args.reps < 1:
                raise ConfigurationError("reps must be at least 1")
            return cmd_plan(args)
        return cmd_bench_entropy(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except EpislamError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
