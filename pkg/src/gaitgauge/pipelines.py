"""Evaluation orchestration.

base_pipeline runs one (terrain, DR, level, seed) environment through the
goal schedules; level_pipeline binary-searches the highest difficulty level
whose goal-reaching success rate clears the seed-majority threshold;
multi_pipeline fans jobs over a process pool with manifest-order merging;
stress_pipeline sweeps the full terrain x DR matrix into a ScoreTree.

Determinism contract: merged results are a pure function of the manifest.
Child seeds derive from a root seed and the cell key through SHA-256, so no
two cells share an RNG stream, and worker count only changes scheduling.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing as mp
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from . import __version__
from .goals import GOAL_KINDS, TargetDirective, build_goal, command_limits_for, success_check
from .metrics import NormalizationConfig, aggregate_goal_scores, trial_metrics
from .policy import LatentRecord, MoEPolicy, MoEPolicyRunner, Policy, dump_latents, scripted_policy
from .robot import RobotDescription, default_description
from .scoring import CellScore, Leaf, ScoreTree, ScoreWeights, config_hash, grouped_reports, score_cell
from .sim import DomainRandomization, ReferenceSimConfig, ReferenceSimulator, SimConfig, friction_sweep
from .terrain import TerrainSpec, generate
from .episode import run_goal_episode

# The seven evaluation terrains: ascending and descending slopes/stairs count
# as separate environments.
TERRAIN_SET: tuple[tuple[str, str], ...] = (
    ("flat", "flat"),
    ("wave", "wave"),
    ("slope_forward", "slope_up"),
    ("slope_backward", "slope_down"),
    ("stairs_forward", "stairs_up"),
    ("stairs_backward", "stairs_down"),
    ("obstacle", "obstacle"),
)

LEVELS = 10


class PipelineError(RuntimeError):
    pass


def derive_seed(root: int, *parts) -> int:
    """Stable 63-bit child seed from the root and a cell key."""
    key = ":".join([str(root), *[str(p) for p in parts]])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


# Generation is a pure function of (TerrainSpec, seed), so episodes within
# one process can share one immutable heightfield per (kind, level, seed).
_generate_cached = lru_cache(maxsize=64)(generate)


@dataclass(frozen=True)
class PolicySpec:
    """Picklable recipe for building a policy inside a worker."""

    kind: str = "scripted"  # scripted | moe
    name: str = "trot_tracker"
    path: str | None = None
    record_latents: bool = False

    def build(self) -> Policy:
        if self.kind == "scripted":
            return scripted_policy(self.name)
        if self.kind == "moe":
            if not self.path:
                raise PipelineError("moe policy spec needs a weights path")
            return MoEPolicyRunner(MoEPolicy.load(self.path), record_latents=self.record_latents)
        raise PipelineError(f"unknown policy kind {self.kind!r}")

    def fingerprint(self) -> str:
        if self.kind == "moe" and self.path:
            return hashlib.sha256(Path(self.path).read_bytes()).hexdigest()[:16]
        return f"scripted:{self.name}"


@dataclass(frozen=True)
class BackendSpec:
    """Simulator backend recipe: the built-in reference proxy or a wire
    bridge address ("host:port" or "stdio:<command>")."""

    kind: str = "reference"
    address: str | None = None

    def build(self, engine: "EngineConfig"):
        if self.kind == "reference":
            return ReferenceSimulator(sim_config=engine.sim, ref_config=engine.ref, robot=engine.robot)
        if self.kind == "bridge":
            from .bridge import BridgeBackend

            if not self.address:
                raise PipelineError("bridge backend needs an address")
            return BridgeBackend(self.address, sim_config=engine.sim, robot=engine.robot)
        raise PipelineError(f"unknown backend kind {self.kind!r}")


@dataclass(frozen=True)
class EngineConfig:
    """Resolved knobs shared by every pipeline stage."""

    sim: SimConfig = field(default_factory=SimConfig)
    ref: ReferenceSimConfig = field(default_factory=ReferenceSimConfig)
    robot: RobotDescription = field(default_factory=default_description)
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    goals: tuple[str, ...] = GOAL_KINDS
    goal_mode: str = "worst50"
    metric_seeds: int = 3
    pass_seeds: int = 5
    pass_threshold: float = 0.8
    command_cap: float | None = None
    success_threshold_m: float = 4.0
    c_power: float = 400.0
    c_smooth: float = 20.0
    command_s: float = 3.0
    stop_s: float = 1.0
    target_timeout_s: float = 20.0
    target_offset_x: float = 4.5
    tile_length_m: float = 8.0
    tile_width_m: float = 8.0
    resolution_m: float = 0.05

    def normalization_for(self, terrain_kind: str) -> NormalizationConfig:
        limits = command_limits_for(terrain_kind, self.command_cap)
        return NormalizationConfig(
            c_lin=limits.vx, c_ang=limits.wz, c_power=self.c_power, c_smooth=self.c_smooth
        )

    def schedule_for(self, goal: str, terrain_kind: str):
        return build_goal(
            goal,
            terrain_kind,
            limits=command_limits_for(terrain_kind, self.command_cap),
            command_s=self.command_s,
            stop_s=self.stop_s,
            target=TargetDirective(
                offset_x=self.target_offset_x, min_displacement_m=self.success_threshold_m
            ),
            target_timeout_s=self.target_timeout_s,
        )

    def terrain_spec(self, kind: str, level: int, seed: int) -> TerrainSpec:
        return TerrainSpec(
            kind=kind,
            difficulty=level / 10.0,
            length_m=self.tile_length_m,
            width_m=self.tile_width_m,
            resolution_m=self.resolution_m,
            seed=seed,
        )


def default_dr_presets(points: int = 9) -> tuple[tuple[str, DomainRandomization], ...]:
    """The M=9 domain-randomization presets: the friction sweep."""
    return tuple(friction_sweep(points))


@dataclass(frozen=True)
class EvaluationCell:
    terrain_name: str
    terrain_kind: str
    dr_name: str
    dr: DomainRandomization
    level: int
    goal: str
    seed: int

    def key(self) -> str:
        return f"{self.terrain_name}/{self.dr_name}/L{self.level}/{self.goal}/s{self.seed}"


@dataclass
class BaseResult:
    """One (terrain, DR, level, seed) evaluation across goal schedules."""

    leaves: list[Leaf]
    passed: bool | None
    error: str | None = None
    traces: dict | None = None


def pass_seeds_for(root_seed: int, terrain_name: str, dr_name: str, count: int) -> list[int]:
    """The goal-reaching seed set for one (terrain, DR) cell; constant across
    levels so the search probes one predicate."""
    return [derive_seed(root_seed, "pass", terrain_name, dr_name, i) for i in range(count)]


def metric_seeds_for(root_seed: int, terrain_name: str, dr_name: str, count: int) -> list[int]:
    return [derive_seed(root_seed, "metric", terrain_name, dr_name, i) for i in range(count)]


def base_pipeline(
    terrain_name: str,
    terrain_kind: str,
    dr: DomainRandomization,
    level: int,
    seed: int,
    policy_spec: PolicySpec,
    engine: EngineConfig,
    backend_spec: BackendSpec | None = None,
    goals: tuple[str, ...] | None = None,
    root_seed: int = 0,
    keep_traces: bool = False,
    latents_out: str | None = None,
) -> BaseResult:
    """Reset, run every goal schedule, compute per-goal metrics.

    Exceptions mark the result errored with diagnostics instead of aborting
    the sweep.  With ``latents_out`` and a latent-recording policy the
    per-step gate weights and encoder latents go to a CSV.
    """
    backend_spec = backend_spec or BackendSpec()
    goals = goals or engine.goals
    try:
        terrain_seed = derive_seed(root_seed, "terrain", terrain_name, level)
        terrain = _generate_cached(engine.terrain_spec(terrain_kind, level, terrain_seed))
        backend = backend_spec.build(engine)
        policy = policy_spec.build()
        norm = engine.normalization_for(terrain_kind)
        leaves: list[Leaf] = []
        passed: bool | None = None
        traces = {} if keep_traces else None
        latent_records: list[LatentRecord] = []
        for goal in goals:
            schedule = engine.schedule_for(goal, terrain_kind)
            result = run_goal_episode(backend, policy, terrain, dr, seed, schedule)
            per_trial = trial_metrics(result.trace, norm, engine.robot)
            leaves.append(
                Leaf(
                    goal=goal,
                    seed=seed,
                    metrics=aggregate_goal_scores(per_trial, mode=engine.goal_mode),
                    trial_metrics=per_trial,
                    fell=result.fell,
                )
            )
            if goal == "target_position":
                passed = success_check(result.trace, engine.success_threshold_m)
            if traces is not None:
                traces[goal] = result.trace
            if latents_out and getattr(policy, "latent_log", None):
                for t, (gate, latent) in zip(result.trace.time, policy.latent_log):
                    latent_records.append(
                        LatentRecord(
                            timestamp=float(t),
                            terrain_id=terrain_name,
                            command_id=goal,
                            gate=gate,
                            latent=latent,
                        )
                    )
        if latents_out:
            num_experts = latent_records[0].gate.shape[0] if latent_records else 0
            latent_dim = latent_records[0].latent.shape[0] if latent_records else 0
            dump_latents(latent_records, latents_out, num_experts, latent_dim)
        if hasattr(backend, "close"):
            backend.close()
        return BaseResult(leaves=leaves, passed=passed, traces=traces)
    except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
        return BaseResult(leaves=[], passed=None, error=f"{type(exc).__name__}: {exc}")


@dataclass
class LevelResult:
    level_star: int
    search_trace: dict[str, float]
    quality_leaves: list[Leaf]
    error: str | None = None


def binary_search_max_passing(level_passes, levels: int = LEVELS) -> int:
    """Highest passing level under a monotone predicate (0 if level 1 fails).

    For a non-monotone predicate the result is still a passing level whose
    successor failed its probe, and at most ceil(log2(levels)) + 1 levels are
    probed.
    """
    if not level_passes(1):
        return 0
    lo, hi = 1, levels
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if level_passes(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def level_pipeline(
    terrain_name: str,
    terrain_kind: str,
    dr: DomainRandomization,
    policy_spec: PolicySpec,
    engine: EngineConfig,
    backend_spec: BackendSpec | None = None,
    root_seed: int = 0,
    dr_name: str = "dr",
    compute_quality: bool = True,
) -> LevelResult:
    """Binary search for the highest level whose goal-reaching success rate
    clears the threshold, then quality evaluation at that level.

    A level passes iff at least ``pass_threshold`` of the pass seeds succeed
    (5 seeds and 0.8 by default, so 4-of-5).  If level 1 fails the sentinel
    L* = 0 is returned and quality is measured at level 1.
    """
    seeds = pass_seeds_for(root_seed, terrain_name, dr_name, engine.pass_seeds)
    search_trace: dict[str, float] = {}

    def level_passes(level: int) -> bool:
        successes = 0
        for seed in seeds:
            result = base_pipeline(
                terrain_name,
                terrain_kind,
                dr,
                level,
                seed,
                policy_spec,
                engine,
                backend_spec,
                goals=("target_position",),
                root_seed=root_seed,
            )
            if result.error:
                raise PipelineError(f"pass probe failed at level {level}: {result.error}")
            successes += bool(result.passed)
        fraction = successes / len(seeds)
        search_trace[str(level)] = fraction
        return fraction >= engine.pass_threshold - 1e-12

    try:
        level_star = binary_search_max_passing(level_passes)

        quality_level = max(level_star, 1)
        quality_leaves: list[Leaf] = []
        if not compute_quality:
            return LevelResult(level_star=level_star, search_trace=search_trace, quality_leaves=[])
        for seed in metric_seeds_for(root_seed, terrain_name, dr_name, engine.metric_seeds):
            result = base_pipeline(
                terrain_name,
                terrain_kind,
                dr,
                quality_level,
                seed,
                policy_spec,
                engine,
                backend_spec,
                root_seed=root_seed,
            )
            if result.error:
                raise PipelineError(f"quality run failed: {result.error}")
            quality_leaves.extend(result.leaves)
        return LevelResult(level_star=level_star, search_trace=search_trace, quality_leaves=quality_leaves)
    except Exception as exc:  # noqa: BLE001
        return LevelResult(level_star=0, search_trace=search_trace, quality_leaves=[], error=f"{type(exc).__name__}: {exc}")


def linear_scan_level(
    terrain_name: str,
    terrain_kind: str,
    dr: DomainRandomization,
    policy_spec: PolicySpec,
    engine: EngineConfig,
    backend_spec: BackendSpec | None = None,
    root_seed: int = 0,
    dr_name: str = "dr",
) -> int:
    """Exhaustive oracle: probe every level and return the highest passing
    one under the same seed-majority predicate (0 if none)."""
    seeds = pass_seeds_for(root_seed, terrain_name, dr_name, engine.pass_seeds)
    best = 0
    for level in range(1, LEVELS + 1):
        successes = 0
        for seed in seeds:
            result = base_pipeline(
                terrain_name,
                terrain_kind,
                dr,
                level,
                seed,
                policy_spec,
                engine,
                backend_spec,
                goals=("target_position",),
                root_seed=root_seed,
            )
            if result.error:
                raise PipelineError(result.error)
            successes += bool(result.passed)
        if successes / len(seeds) >= engine.pass_threshold - 1e-12:
            best = level
    return best


# -- worker pool -------------------------------------------------------------


@dataclass(frozen=True)
class CellJob:
    terrain_name: str
    terrain_kind: str
    dr_name: str
    dr: DomainRandomization
    policy_spec: PolicySpec
    engine: EngineConfig
    backend_spec: BackendSpec
    root_seed: int


def _run_cell_job(job: CellJob) -> CellScore:
    result = level_pipeline(
        job.terrain_name,
        job.terrain_kind,
        job.dr,
        job.policy_spec,
        job.engine,
        job.backend_spec,
        root_seed=job.root_seed,
        dr_name=job.dr_name,
    )
    if result.error:
        return CellScore(
            terrain=job.terrain_name,
            dr_name=job.dr_name,
            dr=job.dr.to_dict(),
            level_star=0,
            quality={},
            metric_vectors={},
            score=0.0,
            leaves=[],
            search_trace=result.search_trace,
            error=result.error,
        )
    score, quality, vectors = score_cell(
        result.level_star,
        result.quality_leaves,
        job.engine.weights,
        goal_mode=job.engine.goal_mode,
        expected_seeds=job.engine.metric_seeds,
    )
    return CellScore(
        terrain=job.terrain_name,
        dr_name=job.dr_name,
        dr=job.dr.to_dict(),
        level_star=result.level_star,
        quality=quality,
        metric_vectors=vectors,
        score=score,
        leaves=result.quality_leaves,
        search_trace=result.search_trace,
    )


def _mp_context():
    methods = mp.get_all_start_methods()
    return mp.get_context("fork" if "fork" in methods else "spawn")


def multi_pipeline(jobs: list, worker, workers: int = 1, retries: int = 1, progress: bool = False) -> list:
    """Run jobs on a pool; results merge in job order regardless of
    completion order.  A failed job is retried once, then surfaces its
    exception object in place of a result."""
    if workers <= 1:
        results = []
        for i, job in enumerate(jobs):
            results.append(_attempt(worker, job, retries))
            _emit_progress(progress, i, len(jobs))
        return results
    results = [None] * len(jobs)
    done = 0
    with ProcessPoolExecutor(max_workers=workers, mp_context=_mp_context()) as pool:
        futures = {pool.submit(_attempt, worker, job, retries): i for i, job in enumerate(jobs)}
        for future, index in futures.items():
            results[index] = future.result()
            done += 1
            _emit_progress(progress, done - 1, len(jobs))
    return results


def _attempt(worker, job, retries: int):
    last: Exception | None = None
    for _ in range(retries + 1):
        try:
            return worker(job)
        except Exception as exc:  # noqa: BLE001 - isolation contract
            last = exc
    return last


def _emit_progress(enabled: bool, index: int, total: int) -> None:
    if enabled:
        print(json.dumps({"event": "job_done", "index": index, "total": total}), file=sys.stderr, flush=True)


# -- stress ------------------------------------------------------------------


@dataclass
class RunManifest:
    """Everything needed to reproduce a run bit-for-bit."""

    engine_version: str
    config_hash: str
    policy_fingerprint: str
    root_seed: int
    terrains: list[list[str]]
    dr_names: list[str]
    created_unix: float

    def to_dict(self) -> dict:
        return {
            "engine_version": self.engine_version,
            "config_hash": self.config_hash,
            "policy_fingerprint": self.policy_fingerprint,
            "root_seed": self.root_seed,
            "terrains": self.terrains,
            "dr_names": self.dr_names,
            "created_unix": self.created_unix,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @staticmethod
    def load(path: str | Path) -> "RunManifest":
        doc = json.loads(Path(path).read_text())
        return RunManifest(
            engine_version=doc["engine_version"],
            config_hash=doc["config_hash"],
            policy_fingerprint=doc["policy_fingerprint"],
            root_seed=doc["root_seed"],
            terrains=doc["terrains"],
            dr_names=doc["dr_names"],
            created_unix=doc["created_unix"],
        )


def stress_pipeline(
    policy_spec: PolicySpec,
    engine: EngineConfig,
    backend_spec: BackendSpec | None = None,
    terrains: tuple[tuple[str, str], ...] = TERRAIN_SET,
    dr_presets: tuple[tuple[str, DomainRandomization], ...] | None = None,
    root_seed: int = 0,
    workers: int = 1,
    progress: bool = False,
) -> tuple[ScoreTree, RunManifest]:
    """Full terrain x DR sweep into a scored tree.

    Per (terrain, DR) cell: level search, quality at L*, score.  Errored
    cells are carried in the tree, never dropped silently; two runs of one
    manifest produce byte-identical tree JSON for any worker count.
    """
    backend_spec = backend_spec or BackendSpec()
    dr_presets = dr_presets if dr_presets is not None else default_dr_presets()
    jobs = [
        CellJob(
            terrain_name=name,
            terrain_kind=kind,
            dr_name=dr_name,
            dr=dr,
            policy_spec=policy_spec,
            engine=engine,
            backend_spec=backend_spec,
            root_seed=root_seed,
        )
        for name, kind in terrains
        for dr_name, dr in dr_presets
    ]
    results = multi_pipeline(jobs, _run_cell_job, workers=workers, progress=progress)
    cells: list[CellScore] = []
    for job, result in zip(jobs, results):
        if isinstance(result, Exception):
            cells.append(
                CellScore(
                    terrain=job.terrain_name,
                    dr_name=job.dr_name,
                    dr=job.dr.to_dict(),
                    level_star=0,
                    quality={},
                    metric_vectors={},
                    score=0.0,
                    error=f"{type(result).__name__}: {result}",
                )
            )
        else:
            cells.append(result)

    cfg_doc = {
        "weights": engine.weights.to_dict(),
        "goal_mode": engine.goal_mode,
        "metric_seeds": engine.metric_seeds,
        "pass_seeds": engine.pass_seeds,
        "pass_threshold": engine.pass_threshold,
        "command_cap": engine.command_cap,
        "success_threshold_m": engine.success_threshold_m,
        "c_power": engine.c_power,
        "c_smooth": engine.c_smooth,
        "terrains": [list(t) for t in terrains],
        "dr": {name: dr.to_dict() for name, dr in dr_presets},
        "root_seed": root_seed,
        "backend": backend_spec.kind,
    }
    digest = config_hash(cfg_doc)
    tree = ScoreTree(
        engine_version=__version__,
        config_hash=digest,
        weights=engine.weights,
        normalization={
            kind: engine.normalization_for(kind).to_dict() for _, kind in terrains
        },
        seeds={
            "root": root_seed,
            "pass_seed_count": engine.pass_seeds,
            "metric_seed_count": engine.metric_seeds,
        },
        goal_mode=engine.goal_mode,
        cells=cells,
    )
    tree.aggregate()
    manifest = RunManifest(
        engine_version=__version__,
        config_hash=digest,
        policy_fingerprint=policy_spec.fingerprint(),
        root_seed=root_seed,
        terrains=[list(t) for t in terrains],
        dr_names=[name for name, _ in dr_presets],
        created_unix=time.time(),
    )
    return tree, manifest


def write_reports(tree: ScoreTree, out_dir: str | Path) -> dict[str, Path]:
    """Persist the tree plus CSV summaries; returns the artifact paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "score_tree": out / "score_tree.json",
        "summary": out / "summary.csv",
        "radar": out / "radar.csv",
        "detailed": out / "detailed_metrics.csv",
    }
    tree.save(paths["score_tree"])
    report = grouped_reports(tree)
    with open(paths["summary"], "w") as f:
        f.write("score,tracking,tracking_std,safety,safety_std,quality,quality_std,level\n")
        f.write(
            ",".join(
                format(v, ".12g")
                for v in (
                    report.final_score,
                    report.category_means.get("tracking", 0.0),
                    report.category_stds.get("tracking", 0.0),
                    report.category_means.get("safety", 0.0),
                    report.category_stds.get("safety", 0.0),
                    report.category_means.get("quality", 0.0),
                    report.category_stds.get("quality", 0.0),
                    report.mean_level,
                )
            )
            + "\n"
        )
    with open(paths["radar"], "w") as f:
        f.write("terrain,score\n")
        for name, value in tree.terrain_scores.items():
            f.write(f"{name},{format(value, '.12g')}\n")
    with open(paths["detailed"], "w") as f:
        f.write("metric,mean,top25,worst50\n")
        for metric, modes in report.metric_table.items():
            f.write(
                f"{metric},{format(modes.get('mean', 0.0), '.12g')},"
                f"{format(modes.get('top25', 0.0), '.12g')},{format(modes.get('worst50', 0.0), '.12g')}\n"
            )
    return paths
