"""Command-line entry point.

    taxons run     --config maze.cfg --seed 7 --out runs/t7
    taxons sweep   --config maze.cfg --methods TAXONS,NS --seeds 1,2,3 --out runs/
    taxons compare runs/* --alpha 0.05 --out comparison/
    taxons goal    --run runs/t7 --image goal.ppm [--replay]
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from itertools import combinations
from pathlib import Path

from . import envs, persist, policies
from .autoencoder import load_checkpoint
from .persist import ConfigError, RunDirectoryRecorder
from .raster import read_ppm, to_observation
from .search import (LEARNED_OBSERVER_PRESETS, PRESETS, run_search,
                     select_policy_for_goal)
from .stats import ComparisonReport, holm_bonferroni, mann_whitney_u


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taxons", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one search run")
    p_run.add_argument("--config", required=True, help="run config file")
    p_run.add_argument("--seed", type=int, default=None, help="master seed override")
    p_run.add_argument("--out", required=True, help="run directory to create")
    p_run.add_argument("--force", action="store_true",
                       help="allow writing into an existing non-empty directory")

    p_sweep = sub.add_parser("sweep", help="run a methods x seeds grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--methods", required=True,
                         help="comma-separated method presets")
    p_sweep.add_argument("--seeds", required=True, help="comma-separated seeds")
    p_sweep.add_argument("--out", required=True, help="parent directory for runs")
    p_sweep.add_argument("--resume", action="store_true",
                         help="skip runs whose manifest checksums verify")
    p_sweep.add_argument("--force", action="store_true")

    p_cmp = sub.add_parser("compare", help="Mann-Whitney comparisons of final coverage")
    p_cmp.add_argument("runs", nargs="+", help="run directories, any methods")
    p_cmp.add_argument("--alpha", type=float, default=0.05)
    p_cmp.add_argument("--out", default=".", help="where to write comparison.csv/.txt")

    p_goal = sub.add_parser("goal", help="retrieve the policy closest to a goal image")
    p_goal.add_argument("--run", required=True, help="run directory")
    p_goal.add_argument("--image", required=True, help="goal observation (PPM)")
    p_goal.add_argument("--replay", action="store_true",
                        help="re-run the selected policy and report its ground truth")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.out, args.force)
        if args.command == "sweep":
            methods = [m.strip() for m in args.methods.split(",") if m.strip()]
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            return cmd_sweep(args.config, methods, seeds, args.out,
                             resume=args.resume, force=args.force)
        if args.command == "compare":
            return cmd_compare(args.runs, args.alpha, args.out)
        return cmd_goal(args.run, args.image, args.replay)
    except (ConfigError, FileNotFoundError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _prepare_out_dir(out, force: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(
            f"output directory {out} exists and is not empty (use --force to overwrite)")
    return out


def execute_run(config, out_dir):
    """Runs one search and persists it; byte-identical for identical configs."""
    recorder = RunDirectoryRecorder(out_dir)
    return run_search(config, recorder)


def cmd_run(config_path, seed, out, force) -> int:
    config = persist.load_config(config_path)
    if seed is not None:
        config.seed = seed
    out_dir = _prepare_out_dir(out, force)
    result = execute_run(config, out_dir)
    final_cov = result.curve[-1][2] if result.curve else 0.0
    print(f"{config.method} seed={config.seed}: {len(result.archive)} policies "
          f"archived, final coverage {final_cov:.4f}% -> {out_dir}")
    return 0


def cmd_sweep(config_path, methods, seeds, out, resume=False, force=False) -> int:
    base = persist.load_config(config_path)
    for method in methods:
        if method not in PRESETS:
            raise ConfigError(f"unknown method {method!r} in --methods")
    if not seeds:
        raise ConfigError("--seeds produced an empty list")
    out = Path(out)
    failures = []
    for method in methods:
        for seed in seeds:
            run_dir = out / f"{method}_seed{seed}"
            if resume and persist.run_is_complete(run_dir):
                print(f"skip {run_dir} (complete, checksums match)")
                continue
            config = replace(base, method=method, seed=seed).validate()
            try:
                _prepare_out_dir(run_dir, force or resume)
                result = execute_run(config, run_dir)
                cov = result.curve[-1][2] if result.curve else 0.0
                print(f"done {run_dir}: final coverage {cov:.4f}%")
            except Exception as exc:  # record and keep sweeping
                failures.append((str(run_dir), str(exc)))
                print(f"FAILED {run_dir}: {exc}", file=sys.stderr)
    if failures:
        print(f"{len(failures)} run(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_compare(run_dirs, alpha, out) -> int:
    groups: dict[str, list[float]] = {}
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        config = persist.load_run_config(run_dir)
        cov = persist.read_final_coverage(run_dir / persist.CURVE_FILE)
        groups.setdefault(config.method, []).append(cov)
    for method in sorted(groups):
        if len(groups[method]) < 2:
            print(f"warning: group {method} has fewer than 2 runs; excluded",
                  file=sys.stderr)
            del groups[method]
    if len(groups) < 2:
        raise ConfigError("compare needs at least two method groups with >= 2 runs each")

    reports = []
    for met_a, met_b in combinations(sorted(groups), 2):
        res = mann_whitney_u(groups[met_a], groups[met_b])
        reports.append(ComparisonReport(
            method_a=met_a, method_b=met_b,
            n_a=len(groups[met_a]), n_b=len(groups[met_b]),
            u=res.u, p_value=res.p_value, exact=res.exact))
    holm = holm_bonferroni([r.p_value for r in reports], alpha)
    for report, adj, rej in zip(reports, holm.p_adjusted, holm.reject):
        report.p_adjusted = adj
        report.reject = rej

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "comparison.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("method_a,method_b,n_a,n_b,U,p_value,exact,p_adjusted,reject\n")
        for r in reports:
            fh.write(f"{r.method_a},{r.method_b},{r.n_a},{r.n_b},"
                     f"{persist.format_float(r.u)},{persist.format_float(r.p_value)},"
                     f"{int(r.exact)},{persist.format_float(r.p_adjusted)},"
                     f"{int(r.reject)}\n")
    lines = [f"pairwise Mann-Whitney (two-sided) with Holm-Bonferroni at alpha={alpha:g}"]
    for method in sorted(groups):
        vals = ", ".join(f"{v:.4f}" for v in sorted(groups[method]))
        lines.append(f"  {method}: n={len(groups[method])} final coverage [{vals}]")
    for r in reports:
        verdict = "significant" if r.reject else "not significant"
        branch = "exact" if r.exact else "normal approx."
        lines.append(f"  {r.method_a} vs {r.method_b}: U={r.u:g} "
                     f"p={r.p_value:.6g} ({branch}) adjusted={r.p_adjusted:.6g} "
                     f"-> {verdict}")
    summary = "\n".join(lines) + "\n"
    persist.write_text(out / "comparison.txt", summary)
    print(summary, end="")
    return 0


def cmd_goal(run_dir, image_path, replay=False) -> int:
    run_dir = Path(run_dir)
    config = persist.load_run_config(run_dir)
    if config.method not in LEARNED_OBSERVER_PRESETS:
        raise ConfigError(
            f"run used method {config.method}, which has no learned outcome space; "
            f"goal retrieval needs one of {', '.join(LEARNED_OBSERVER_PRESETS)}")
    repertoire = persist.read_archive(run_dir / persist.ARCHIVE_FILE)
    if len(repertoire) == 0:
        raise LookupError("the archive of this run is empty")
    ae = load_checkpoint(persist.latest_checkpoint(run_dir))
    goal_img = read_ppm(image_path)
    expected = (config.observation_size, config.observation_size, 3)
    if goal_img.shape != expected:
        raise ConfigError(
            f"goal image has shape {goal_img.shape}, expected {expected}")
    entry, distance = select_policy_for_goal(repertoire, ae, to_observation(goal_img))
    print(f"policy {entry.genome.id} (generation {entry.generation}) "
          f"distance {persist.format_float(distance)}")
    if replay:
        arena = envs.make_arena(config.environment, config.arena or None)
        cspec = policies.ControllerSpec(input_dim=arena.sensor_dim,
                                        hidden=(config.controller_hidden,),
                                        output_dim=arena.action_dim)
        controller = policies.Controller(cspec, entry.genome)
        result = envs.rollout(arena, controller, config.horizon,
                              config.observation_size, seed=entry.genome.id)
        x, y = result.eval_ground_truth
        print(f"replayed ground truth ({persist.format_float(x)}, "
              f"{persist.format_float(y)})")
    return 0


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
