"""Experiment driver: runs training, emits CSV artifacts, and searches swap periods.

A run writes four artifacts into its output directory: `metrics.csv` with one
row per (model, evaluation point, grid cell), `pool_snapshots.csv` with the
archive contents at every evaluation point, `manifest.txt` with the resolved
config and exchange history, and `checkpoints/` with periodic network dumps.
Everything is keyed off the master seed, so identical configs give
byte-identical files.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .curriculum import StartPool
from .envs import Band, PlanarEnv, PoseMode
from .errors import ConfigurationError
from .parallel import (
    ModelSet,
    Strategy,
    TrainResult,
    evaluate_grid,
    train,
)
from .ppo import save_actor_critic

METRICS_HEADER = (
    "run_id",
    "model_id",
    "iteration",
    "band",
    "pose_mode",
    "success_rate",
    "mean_discounted_return",
    "pool_size",
    "coverage_entropy",
)
SNAPSHOT_HEADER = ("model_id", "iteration", "added_iteration", "x", "y")

# spawn keys carve independent streams out of one master seed
_ORCHESTRATION = 0
_MODEL = 1
_EVAL = 2


def _stream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


@dataclass(frozen=True)
class MetricsRecord:
    """One evaluation-grid cell for one model at one evaluation point."""

    run_id: str
    model_id: int
    iteration: int
    band: Band
    pose_mode: PoseMode
    success_rate: float
    mean_discounted_return: float
    pool_size: int
    coverage_entropy: float

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ConfigurationError(f"success_rate outside [0, 1]: {self.success_rate}")

    def to_row(self) -> list:
        return [
            self.run_id,
            self.model_id,
            self.iteration,
            self.band.value,
            self.pose_mode.value,
            self.success_rate,
            self.mean_discounted_return,
            self.pool_size,
            self.coverage_entropy,
        ]

    @classmethod
    def from_row(cls, row: Sequence[str]) -> "MetricsRecord":
        if len(row) != len(METRICS_HEADER):
            raise ConfigurationError(f"metrics row has {len(row)} fields, expected {len(METRICS_HEADER)}")
        return cls(
            run_id=row[0],
            model_id=int(row[1]),
            iteration=int(row[2]),
            band=Band(row[3]),
            pose_mode=PoseMode(row[4]),
            success_rate=float(row[5]),
            mean_discounted_return=float(row[6]),
            pool_size=int(row[7]),
            coverage_entropy=float(row[8]),
        )


def read_metrics(path) -> list[MetricsRecord]:
    """Parse a metrics CSV back into records, header checked."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(METRICS_HEADER):
            raise ConfigurationError(f"unexpected metrics header in {path}: {header}")
        return [MetricsRecord.from_row(row) for row in reader]


def coverage_entropy(
    pool,
    grid_resolution: int = 10,
    bounds_low: Sequence[float] = (0.0, 0.0),
    bounds_high: Sequence[float] = (1.0, 1.0),
) -> float:
    """Shannon entropy (natural log) of the pool's occupancy over a uniform grid.

    Accepts a StartPool or a plain (n, d) array of states. States are binned
    into grid_resolution cells per dimension across the given bounding box;
    an empty pool scores 0 by definition, as does a single occupied cell.
    """
    if grid_resolution < 2:
        raise ConfigurationError("grid_resolution must be at least 2")
    states = pool.states_array() if isinstance(pool, StartPool) else np.asarray(pool, dtype=np.float64)
    if states.size == 0:
        return 0.0
    lo = np.asarray(bounds_low, dtype=np.float64)
    hi = np.asarray(bounds_high, dtype=np.float64)
    scaled = (states - lo) / (hi - lo)
    cells = np.clip((scaled * grid_resolution).astype(np.int64), 0, grid_resolution - 1)
    flat = np.ravel_multi_index(cells.T, (grid_resolution,) * states.shape[1])
    counts = np.bincount(flat)
    probs = counts[counts > 0] / states.shape[0]
    # max with 0.0 first also turns the point-mass -0.0 into clean zero
    return max(0.0, float(-np.sum(probs * np.log(probs))))


def evaluate(
    policy,
    env: PlanarEnv,
    eval_episodes_per_band: int,
    rng: np.random.Generator,
    run_id: str = "eval",
    model_id: int = 0,
    iteration: int = 0,
    pool_size: int = 0,
    pool_entropy: float = 0.0,
    stochastic: bool = False,
) -> list[MetricsRecord]:
    """Six records, one per (band, pose mode) cell, mean-action by default."""
    cells = evaluate_grid(env, policy, eval_episodes_per_band, rng, stochastic=stochastic)
    return [
        MetricsRecord(
            run_id=run_id,
            model_id=model_id,
            iteration=iteration,
            band=cell.band,
            pose_mode=cell.pose_mode,
            success_rate=cell.success_rate,
            mean_discounted_return=cell.mean_return,
            pool_size=pool_size,
            coverage_entropy=pool_entropy,
        )
        for cell in cells
    ]


def _format_value(key: str, value) -> str:
    if isinstance(value, Strategy):
        return value.value
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        # keep the manifest re-parseable under each key's own vocabulary
        return "auto" if key == "model.log_std_init" else "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _write_manifest(path, config: ExperimentConfig, result: TrainResult | None, status: str) -> None:
    lines = ["# run manifest"]
    for key, value in config.items():
        lines.append(f"config {key} = {_format_value(key, value)}")
    if result is not None:
        for event in result.swap_events:
            pairs = "-" if event.pairs is None else ",".join(f"{a}-{b}" for a, b in event.pairs)
            lines.append(f"event iteration={event.iteration} kind={event.kind} pairs={pairs}")
        if result.selection is not None:
            lines.append(f"selection best_index = {result.best_index}")
            for i, score in enumerate(result.selection.scores):
                lines.append(f"selection score model={i} value={score!r}")
        else:
            lines.append("selection best_index = ensemble")
    lines.append(f"status = {status}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class RunArtifacts:
    output_dir: Path
    metrics_path: Path
    snapshots_path: Path
    manifest_path: Path
    checkpoint_paths: tuple[Path, ...]
    result: TrainResult


def run(config: ExperimentConfig) -> RunArtifacts:
    """Train under the config and write all artifacts into its output directory.

    Raises ConfigurationError before touching the filesystem if the config is
    invalid; a failure later in training still flushes the metrics written so
    far and stamps the manifest with the failure.
    """
    config.validate()
    out = Path(config.get("run.output_dir"))
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_dir = out / "checkpoints"
    checkpoint_dir.mkdir(exist_ok=True)
    metrics_path = out / "metrics.csv"
    snapshots_path = out / "pool_snapshots.csv"
    manifest_path = out / "manifest.txt"

    env_eval = config.build_env()
    schedule = config.build_schedule()
    curriculum_config = config.build_curriculum()
    ppo_config = config.build_ppo()

    m = config.get("algorithm.models")
    master_seed = config.get("run.master_seed")
    run_id = config.get("run.id")
    total_iterations = config.get("run.iterations")
    eval_every = config.get("run.eval_every")
    episodes_per_band = config.get("run.eval_episodes_per_band")
    checkpoint_every = config.get("run.checkpoint_every")
    stochastic = config.get("run.stochastic_eval")

    model_rngs = [_stream(master_seed, _MODEL, i) for i in range(m)]
    orchestration = _stream(master_seed, _ORCHESTRATION)
    model_set = ModelSet.initialize(
        env_eval,
        m,
        model_rngs,
        shared_pools=schedule.shares_pools,
        share_init=schedule.strategy is Strategy.ASYNC_SYNC,
        **config.model_kwargs(),
    )

    checkpoint_paths: list[Path] = []

    def save_all(current: ModelSet, iteration: int) -> None:
        for i, model in enumerate(current.models):
            path = checkpoint_dir / f"model_{i}_iter_{iteration}.ckpt"
            save_actor_critic(path, model)
            checkpoint_paths.append(path)

    with open(metrics_path, "w", encoding="utf-8", newline="") as metrics_fh, open(
        snapshots_path, "w", encoding="utf-8", newline=""
    ) as snapshots_fh:
        metrics_csv = csv.writer(metrics_fh, lineterminator="\n")
        metrics_csv.writerow(METRICS_HEADER)
        snapshots_csv = csv.writer(snapshots_fh, lineterminator="\n")
        snapshots_csv.writerow(SNAPSHOT_HEADER)

        def snapshot_pools(current: ModelSet, iteration: int) -> None:
            # shared pools live in slot 0; write each slot once
            for slot in range(len(current.archive)):
                for state, added in current.archive[slot].entries():
                    snapshots_csv.writerow([slot, iteration, added, state[0], state[1]])

        snapshot_pools(model_set, 0)

        def on_iteration(iteration: int, current: ModelSet, _records) -> None:
            if iteration % eval_every == 0 or iteration == total_iterations:
                for i, model in enumerate(current.models):
                    archive = current.archive[current.pool_slot(i)]
                    entropy = coverage_entropy(
                        archive,
                        bounds_low=env_eval.bounds_low,
                        bounds_high=env_eval.bounds_high,
                    )
                    rows = evaluate(
                        model.policy,
                        env_eval,
                        episodes_per_band,
                        _stream(master_seed, _EVAL, iteration, i),
                        run_id=run_id,
                        model_id=i,
                        iteration=iteration,
                        pool_size=len(archive),
                        pool_entropy=entropy,
                        stochastic=stochastic,
                    )
                    for record in rows:
                        metrics_csv.writerow(record.to_row())
                snapshot_pools(current, iteration)
                metrics_fh.flush()
                snapshots_fh.flush()
            if iteration % checkpoint_every == 0 or iteration == total_iterations:
                save_all(current, iteration)

        try:
            result = train(
                config.build_env,
                model_set,
                schedule,
                curriculum_config,
                ppo_config,
                total_iterations,
                orchestration,
                select_episodes_per_band=episodes_per_band,
                on_iteration=on_iteration,
            )
        except Exception as exc:
            metrics_fh.flush()
            snapshots_fh.flush()
            _write_manifest(manifest_path, config, None, f"failed: {type(exc).__name__}: {exc}")
            raise

    _write_manifest(manifest_path, config, result, "ok")
    return RunArtifacts(
        output_dir=out,
        metrics_path=metrics_path,
        snapshots_path=snapshots_path,
        manifest_path=manifest_path,
        checkpoint_paths=tuple(checkpoint_paths),
        result=result,
    )


@dataclass(frozen=True)
class KSearchRow:
    """Final Far/Variable success across seeds for one swap period (or baseline)."""

    label: str
    k: int | None
    seed_successes: tuple[float, ...]
    mean_success: float
    std_success: float


def _final_far_variable(artifacts: RunArtifacts) -> float:
    records = read_metrics(artifacts.metrics_path)
    last = max(r.iteration for r in records)
    model_id = artifacts.result.best_index
    for record in records:
        if (
            record.iteration == last
            and record.model_id == model_id
            and record.band is Band.FAR
            and record.pose_mode is PoseMode.VARIABLE
        ):
            return record.success_rate
    raise ConfigurationError("no final Far/Variable row found")


def _summarize(label: str, k: int | None, successes: list[float]) -> KSearchRow:
    values = np.asarray(successes, dtype=np.float64)
    return KSearchRow(
        label=label,
        k=k,
        seed_successes=tuple(successes),
        mean_success=float(values.mean()),
        std_success=float(values.std()),
    )


def k_search(
    template: ExperimentConfig,
    k_values: Sequence[int],
    iterations_per_trial: int,
    seeds: Sequence[int],
) -> list[KSearchRow]:
    """Run every (k, seed) trial plus a no-exchange baseline per seed.

    Each trial is a full run() into a subdirectory of the template's output
    dir; the summary rows aggregate the selected model's final Far/Variable
    success. Two CSVs land next to the trial directories: per-run results
    and the mean/std summary.
    """
    if not k_values:
        raise ConfigurationError("k_values must be nonempty")
    if not seeds:
        raise ConfigurationError("seeds must be nonempty")
    out = Path(template.get("run.output_dir"))
    out.mkdir(parents=True, exist_ok=True)

    trial_rows: list[tuple[str, int | None, int, float]] = []

    def trial(label: str, seed: int, updates: dict) -> float:
        config = template.with_updates(
            {
                "run.iterations": iterations_per_trial,
                "run.master_seed": seed,
                "run.id": f"{label}-seed{seed}",
                "run.output_dir": str(out / f"{label}_seed{seed}"),
                **updates,
            }
        )
        return _final_far_variable(run(config))

    summary: list[KSearchRow] = []
    for k in k_values:
        successes = []
        for seed in seeds:
            value = trial(
                f"k{k}",
                seed,
                {"algorithm.strategy": Strategy.SWAP_CRITICS, "algorithm.swap_every": int(k)},
            )
            successes.append(value)
            trial_rows.append((f"k{k}", int(k), seed, value))
        summary.append(_summarize(f"k{k}", int(k), successes))

    baseline = []
    for seed in seeds:
        value = trial("baseline", seed, {"algorithm.strategy": Strategy.NO_EXCHANGE})
        baseline.append(value)
        trial_rows.append(("baseline", None, seed, value))
    summary.append(_summarize("baseline", None, baseline))

    with open(out / "ksearch_runs.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "k", "seed", "final_far_variable_success"])
        for label, k, seed, value in trial_rows:
            writer.writerow([label, "" if k is None else k, seed, value])
    with open(out / "ksearch_summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "k", "mean_success", "std_success", "n_runs"])
        for row in summary:
            writer.writerow(
                [row.label, "" if row.k is None else row.k, row.mean_success, row.std_success, len(row.seed_successes)]
            )
    return summary
