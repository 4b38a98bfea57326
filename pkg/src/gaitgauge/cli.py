"""Command-line entry point.

Subcommands: stress, level, base, terrain export, metrics replay,
rewards replay, latents pca, policy inspect/random, manifest rerun.
Every evaluation run writes its manifest, resolved config, and reports under
a timestamped directory; all randomness flows from explicit seed flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config, resolve
from .goals import GOAL_KINDS
from .metrics import EpisodeTrace, compute_metrics
from .pipelines import (
    TERRAIN_SET,
    PolicySpec,
    base_pipeline,
    level_pipeline,
    stress_pipeline,
    write_reports,
)
from .policy import MoEPolicy, load_latents_csv, pca_project
from .rewards import episode_reward_report, high_speed_config, multi_terrain_config
from .scoring import ScoreTree, grouped_reports
from .terrain import TERRAIN_KINDS, TerrainSpec, generate

_NUM_FMT = ".12g"


def _fmt(value: float) -> str:
    return format(value, _NUM_FMT)


def render_summary(tree: ScoreTree) -> str:
    """Fixed-width results table; numbers match the CSV exactly."""
    report = grouped_reports(tree)
    header = ["Score", "Tracking", "Safety", "Quality", "Level"]
    if not tree.cells or all(c.error for c in tree.cells):
        return "  ".join(f"{h:>12}" for h in header) + "\n(warning: no scored cells)\n"
    row = [
        _fmt(report.final_score),
        f"{_fmt(report.category_means['tracking'])} ± {_fmt(report.category_stds['tracking'])}",
        f"{_fmt(report.category_means['safety'])} ± {_fmt(report.category_stds['safety'])}",
        f"{_fmt(report.category_means['quality'])} ± {_fmt(report.category_stds['quality'])}",
        _fmt(report.mean_level),
    ]
    width = max(24, *(len(c) for c in row))
    lines = [
        "  ".join(f"{h:>{width}}" for h in header),
        "  ".join(f"{c:>{width}}" for c in row),
        "",
        "Per-terrain scores:",
    ]
    for name, value in tree.terrain_scores.items():
        lines.append(f"  {name:>16}  {_fmt(value)}")
    return "\n".join(lines) + "\n"


def _run_dir(base: Path, tag: str, explicit: str | None) -> Path:
    if explicit:
        path = Path(explicit)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
        path = base / f"{stamp}_{tag}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_run_config(args) -> dict:
    overrides: dict = {}
    if getattr(args, "policy", None):
        overrides["policy"] = {"kind": "moe", "path": args.policy}
    if getattr(args, "scripted", None):
        overrides["policy"] = {"kind": "scripted", "name": args.scripted}
    if getattr(args, "backend", None):
        if args.backend == "reference":
            overrides["backend"] = {"kind": "reference", "address": None}
        else:
            overrides["backend"] = {"kind": "bridge", "address": args.backend}
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = {"root": args.seed}
    return load_config(args.config, overrides)


def _trace_from_path(path: str) -> EpisodeTrace:
    if path.endswith(".npz"):
        return EpisodeTrace.from_npz(path)
    return EpisodeTrace.from_ndjson(path)


def cmd_stress(args) -> int:
    doc = _load_run_config(args)
    run = resolve(doc)
    tree, manifest = stress_pipeline(
        run.policy,
        run.engine,
        backend_spec=run.backend,
        terrains=run.terrains,
        dr_presets=run.dr_presets,
        root_seed=run.root_seed,
        workers=run.workers,
        progress=args.progress,
    )
    out = _run_dir(run.output_dir, "stress", args.out)
    (out / "config.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    manifest.save(out / "manifest.json")
    write_reports(tree, out)
    print(render_summary(tree))
    print(f"artifacts written to {out}")
    errored = tree.errored_cells()
    for cell in errored:
        print(f"errored cell {cell.terrain}/{cell.dr_name}: {cell.error}", file=sys.stderr)
    return 1 if errored else 0


def cmd_level(args) -> int:
    doc = _load_run_config(args)
    run = resolve(doc)
    kind = dict(TERRAIN_SET)[args.terrain]
    dr_map = dict(run.dr_presets)
    if args.dr not in dr_map:
        print(f"unknown dr preset {args.dr!r}; available: {sorted(dr_map)}", file=sys.stderr)
        return 2
    result = level_pipeline(
        args.terrain,
        kind,
        dr_map[args.dr],
        run.policy,
        run.engine,
        run.backend,
        root_seed=run.root_seed,
        dr_name=args.dr,
    )
    print(
        json.dumps(
            {
                "terrain": args.terrain,
                "dr": args.dr,
                "level_star": result.level_star,
                "search": result.search_trace,
                "error": result.error,
            },
            sort_keys=True,
            indent=2,
        )
    )
    return 1 if result.error else 0


def cmd_base(args) -> int:
    doc = _load_run_config(args)
    run = resolve(doc)
    kind = dict(TERRAIN_SET)[args.terrain]
    dr_map = dict(run.dr_presets)
    if args.dr not in dr_map:
        print(f"unknown dr preset {args.dr!r}; available: {sorted(dr_map)}", file=sys.stderr)
        return 2
    goals = tuple(args.goal) if args.goal else None
    policy_spec = run.policy
    if args.latents_out:
        if policy_spec.kind != "moe":
            print("--latents-out needs an MoE policy (--policy)", file=sys.stderr)
            return 2
        policy_spec = PolicySpec(
            kind="moe", name=policy_spec.name, path=policy_spec.path, record_latents=True
        )
    result = base_pipeline(
        args.terrain,
        kind,
        dr_map[args.dr],
        args.level,
        args.episode_seed,
        policy_spec,
        run.engine,
        run.backend,
        goals=goals,
        root_seed=run.root_seed,
        keep_traces=args.trace_out is not None,
        latents_out=args.latents_out,
    )
    if result.error:
        print(f"cell errored: {result.error}", file=sys.stderr)
        return 1
    if args.trace_out and result.traces:
        for goal, trace in result.traces.items():
            trace.to_ndjson(Path(args.trace_out) / f"trace_{goal}.ndjson")
    print(
        json.dumps(
            {
                "passed": result.passed,
                "leaves": [leaf.to_dict() for leaf in result.leaves],
            },
            sort_keys=True,
            indent=2,
        )
    )
    return 0


def cmd_terrain_export(args) -> int:
    difficulty = args.difficulty if args.difficulty is not None else (args.level or 5) / 10.0
    spec = TerrainSpec(
        kind=args.kind,
        difficulty=difficulty,
        length_m=args.length,
        width_m=args.width,
        resolution_m=args.resolution,
        seed=args.seed,
    )
    hf = generate(spec)
    out = Path(args.out)
    if args.format == "csv":
        hf.to_csv(out)
    else:
        hf.save_binary(out)
    print(f"wrote {args.kind} d={difficulty:g} grid {hf.nx}x{hf.ny} to {out}")
    return 0


def cmd_metrics_replay(args) -> int:
    doc = load_config(args.config)
    run = resolve(doc)
    trace = _trace_from_path(args.trace)
    norm = run.engine.normalization_for(args.terrain_kind)
    metrics = compute_metrics(trace, norm, run.engine.robot)
    print(json.dumps({"metrics": metrics.to_dict(), "normalization": norm.to_dict()}, sort_keys=True, indent=2))
    return 0


def cmd_rewards_replay(args) -> int:
    trace = _trace_from_path(args.trace)
    if args.config:
        overrides = {"rewards": {"variant": args.variant}} if args.variant else None
        cfg = resolve(load_config(args.config, overrides)).reward_config()
    elif args.variant == "high_speed":
        cfg = high_speed_config()
    else:
        cfg = multi_terrain_config()
    report = episode_reward_report(trace, cfg)
    if args.csv_out:
        report.to_csv(args.csv_out)
    print(
        json.dumps(
            {"means": report.means, "weighted_means": report.weighted_means, "total_mean": report.total_mean},
            sort_keys=True,
            indent=2,
        )
    )
    return 0


def cmd_latents_pca(args) -> int:
    latents, labels = load_latents_csv(args.input)
    if latents.shape[0] < 2:
        print("need at least two latent rows", file=sys.stderr)
        return 1
    projected = pca_project(latents)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["terrain_id", "pc1", "pc2"])
        for label, row in zip(labels, projected):
            writer.writerow([label, format(row[0], ".9g"), format(row[1], ".9g")])
    print(f"projected {projected.shape[0]} rows to {args.out}")
    return 0


def cmd_policy_inspect(args) -> int:
    policy = MoEPolicy.load(args.path)
    print(json.dumps(policy.describe(), sort_keys=True, indent=2))
    return 0


def cmd_policy_random(args) -> int:
    policy = MoEPolicy.random(seed=args.seed, num_experts=args.experts)
    policy.save(args.out)
    print(f"wrote random policy ({args.experts} experts) to {args.out}")
    return 0


def cmd_manifest_rerun(args) -> int:
    run_dir = Path(args.run_dir)
    config_path = run_dir / "config.json"
    tree_path = run_dir / "score_tree.json"
    if not config_path.exists() or not tree_path.exists():
        print(f"{run_dir} does not contain config.json and score_tree.json", file=sys.stderr)
        return 2
    doc = load_config(config_path)
    if args.workers:
        doc["workers"] = args.workers
    run = resolve(doc)
    tree, _ = stress_pipeline(
        run.policy,
        run.engine,
        backend_spec=run.backend,
        terrains=run.terrains,
        dr_presets=run.dr_presets,
        root_seed=run.root_seed,
        workers=run.workers,
    )
    original = tree_path.read_text()
    fresh = tree.to_json() + "\n"
    out = _run_dir(run.output_dir, "rerun", args.out)
    (out / "score_tree.json").write_text(fresh)
    if fresh == original:
        print(f"rerun identical to {tree_path}")
        return 0
    print("rerun differs from the recorded score tree", file=sys.stderr)
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitgauge",
        description="Sim-to-sim assessment engine for legged locomotion policies.",
    )
    parser.add_argument("--version", action="version", version=f"gaitgauge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON or TOML run configuration")
        p.add_argument("--policy", help="path to an MoE policy weights file (.rgpw)")
        p.add_argument("--scripted", help="scripted policy name (stand, trot_tracker, faulty)")
        p.add_argument("--backend", help="'reference', host:port, or stdio:<command>")
        p.add_argument("--workers", type=int, help="worker process count")
        p.add_argument("--seed", type=int, help="root seed")

    p = sub.add_parser("stress", help="full terrain x DR sweep into a score tree")
    add_run_flags(p)
    p.add_argument("--out", help="output directory (default: timestamped under output_dir)")
    p.add_argument("--progress", action="store_true", help="emit JSON progress events on stderr")
    p.set_defaults(func=cmd_stress)

    p = sub.add_parser("level", help="difficulty-level search for one terrain/DR cell")
    add_run_flags(p)
    p.add_argument("--terrain", required=True, choices=[n for n, _ in TERRAIN_SET])
    p.add_argument("--dr", default="friction_1.0", help="DR preset name, e.g. friction_0.5")
    p.set_defaults(func=cmd_level)

    p = sub.add_parser("base", help="single-cell evaluation")
    add_run_flags(p)
    p.add_argument("--terrain", required=True, choices=[n for n, _ in TERRAIN_SET])
    p.add_argument("--dr", default="friction_1.0")
    p.add_argument("--level", type=int, default=5, choices=range(1, 11))
    p.add_argument("--episode-seed", type=int, default=0)
    p.add_argument("--goal", action="append", choices=list(GOAL_KINDS), help="repeatable; default all")
    p.add_argument("--trace-out", help="directory for per-goal NDJSON traces")
    p.add_argument("--latents-out", help="CSV of per-step gate weights and encoder latents (MoE policies)")
    p.set_defaults(func=cmd_base)

    p = sub.add_parser("terrain", help="terrain tools")
    terrain_sub = p.add_subparsers(dest="terrain_command", required=True)
    pe = terrain_sub.add_parser("export", help="generate and export one heightfield")
    pe.add_argument("--kind", required=True, choices=list(TERRAIN_KINDS))
    pe.add_argument("--difficulty", "--d", type=float, dest="difficulty")
    pe.add_argument("--level", type=int, choices=range(1, 11))
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--length", type=float, default=8.0)
    pe.add_argument("--width", type=float, default=8.0)
    pe.add_argument("--resolution", type=float, default=0.05)
    pe.add_argument("--format", choices=["csv", "rghf"], default="csv")
    pe.add_argument("--out", required=True)
    pe.set_defaults(func=cmd_terrain_export)

    p = sub.add_parser("metrics", help="metric tools")
    metrics_sub = p.add_subparsers(dest="metrics_command", required=True)
    pm = metrics_sub.add_parser("replay", help="recompute metrics from a stored trace")
    pm.add_argument("--trace", required=True, help="NDJSON or NPZ trace file")
    pm.add_argument("--terrain-kind", default="flat", choices=list(TERRAIN_KINDS))
    pm.add_argument("--config")
    pm.set_defaults(func=cmd_metrics_replay)

    p = sub.add_parser("rewards", help="reward tools")
    rewards_sub = p.add_subparsers(dest="rewards_command", required=True)
    pr = rewards_sub.add_parser("replay", help="replay a trace through the reward table")
    pr.add_argument("--trace", required=True)
    pr.add_argument("--variant", choices=["multi_terrain", "high_speed"], default="multi_terrain")
    pr.add_argument("--config", help="run config supplying the rewards section")
    pr.add_argument("--csv-out")
    pr.set_defaults(func=cmd_rewards_replay)

    p = sub.add_parser("latents", help="latent analysis")
    latents_sub = p.add_subparsers(dest="latents_command", required=True)
    pl = latents_sub.add_parser("pca", help="project a latent dump onto its top-2 axes")
    pl.add_argument("--input", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_latents_pca)

    p = sub.add_parser("policy", help="policy weight tools")
    policy_sub = p.add_subparsers(dest="policy_command", required=True)
    pi = policy_sub.add_parser("inspect", help="print the weights-file header")
    pi.add_argument("--path", required=True)
    pi.set_defaults(func=cmd_policy_inspect)
    pw = policy_sub.add_parser("random", help="write a randomly initialized policy")
    pw.add_argument("--out", required=True)
    pw.add_argument("--seed", type=int, default=0)
    pw.add_argument("--experts", type=int, default=4)
    pw.set_defaults(func=cmd_policy_random)

    p = sub.add_parser("manifest", help="manifest tools")
    manifest_sub = p.add_subparsers(dest="manifest_command", required=True)
    pr = manifest_sub.add_parser("rerun", help="re-execute a recorded run and compare")
    pr.add_argument("--run-dir", required=True)
    pr.add_argument("--workers", type=int)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_manifest_rerun)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
