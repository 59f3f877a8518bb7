"""Reverse-curriculum training of sparse-reward policies with parallel critic exchange."""

from .config import ExperimentConfig, parse_config_file
from .curriculum import (
    CurriculumConfig,
    ReturnEstimate,
    StartPool,
    curriculum_iteration,
    discounted_return,
    estimate_returns,
    sample_nearby,
    select_good_starts,
)
from .envs import EVAL_GRID, Band, EvalBand, PlanarEnv, PoseMode, env_names, make_env
from .errors import ConfigurationError, OptimizerError, ResetError, UsageError
from .harness import (
    KSearchRow,
    MetricsRecord,
    RunArtifacts,
    coverage_entropy,
    evaluate,
    k_search,
    read_metrics,
    run,
)
from .parallel import (
    EnsemblePolicy,
    ModelSet,
    PairingPlan,
    SelectionReport,
    Strategy,
    SwapSchedule,
    TrainResult,
    ensemble_policy,
    evaluate_grid,
    make_pairing,
    select_best,
    swap_critics,
    swap_pools,
    train,
)
from .ppo import (
    ActorCritic,
    PpoConfig,
    collect_rollouts,
    compute_advantages,
    load_actor_critic,
    ppo_update,
    save_actor_critic,
)

__version__ = "0.1.0"

__all__ = [
    "ActorCritic",
    "Band",
    "EVAL_GRID",
    "ConfigurationError",
    "CurriculumConfig",
    "EnsemblePolicy",
    "EvalBand",
    "ExperimentConfig",
    "KSearchRow",
    "MetricsRecord",
    "ModelSet",
    "OptimizerError",
    "PairingPlan",
    "PlanarEnv",
    "PoseMode",
    "PpoConfig",
    "ResetError",
    "ReturnEstimate",
    "RunArtifacts",
    "SelectionReport",
    "StartPool",
    "Strategy",
    "SwapSchedule",
    "TrainResult",
    "UsageError",
    "collect_rollouts",
    "compute_advantages",
    "coverage_entropy",
    "curriculum_iteration",
    "discounted_return",
    "ensemble_policy",
    "env_names",
    "estimate_returns",
    "evaluate",
    "evaluate_grid",
    "k_search",
    "load_actor_critic",
    "make_env",
    "make_pairing",
    "parse_config_file",
    "ppo_update",
    "read_metrics",
    "run",
    "sample_nearby",
    "save_actor_critic",
    "select_best",
    "select_good_starts",
    "swap_critics",
    "swap_pools",
    "train",
]
