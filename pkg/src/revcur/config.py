"""Experiment configuration: one flat dotted-key schema shared by files and CLI.

Every key has a typed default here; a config file may override any subset,
and command-line flags override the file. Validation happens by constructing
the real sub-config objects, so a bad value is rejected before any training
starts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .curriculum import CurriculumConfig
from .envs import PlanarEnv, make_env
from .errors import ConfigurationError
from .parallel import Strategy, SwapSchedule
from .ppo import PpoConfig


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigurationError(f"expected an integer, got {text!r}") from exc


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigurationError(f"expected a number, got {text!r}") from exc


def _parse_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigurationError(f"expected comma-separated layer sizes, got {text!r}") from exc
    if not dims or any(d < 1 for d in dims):
        raise ConfigurationError(f"layer sizes must be positive, got {text!r}")
    return dims


def _parse_log_std(text: str) -> float | None:
    if str(text).strip().lower() == "auto":
        return None
    return _parse_float(text)


def _parse_optional_float(text: str) -> float | None:
    if str(text).strip().lower() in ("none", "off"):
        return None
    return _parse_float(text)


def _parse_strategy(text: str) -> Strategy:
    try:
        return Strategy(str(text).strip())
    except ValueError as exc:
        names = ", ".join(s.value for s in Strategy)
        raise ConfigurationError(f"unknown strategy {text!r}; choose one of {names}") from exc


def _parse_str(text: str) -> str:
    return str(text).strip()


@dataclass(frozen=True)
class FieldSpec:
    key: str
    default: object
    parse: Callable[[str], object]
    help: str


SCHEMA: tuple[FieldSpec, ...] = (
    FieldSpec("run.id", "run", _parse_str, "label written into every metrics row"),
    FieldSpec("run.iterations", 200, _parse_int, "training iterations"),
    FieldSpec("run.eval_every", 10, _parse_int, "iterations between evaluation points"),
    FieldSpec("run.eval_episodes_per_band", 50, _parse_int, "episodes per evaluation cell"),
    FieldSpec("run.checkpoint_every", 50, _parse_int, "iterations between checkpoints"),
    FieldSpec("run.master_seed", 0, _parse_int, "seed for every random stream"),
    FieldSpec("run.output_dir", "run_out", _parse_str, "artifact directory"),
    FieldSpec("run.stochastic_eval", False, _parse_bool, "sample actions during evaluation"),
    FieldSpec("env.name", "pointmaze", _parse_str, "environment name"),
    FieldSpec("env.t_max", 10, _parse_int, "episode horizon"),
    FieldSpec("env.gamma", 0.99, _parse_float, "discount factor (also used by the optimizer)"),
    FieldSpec("env.goal_radius", 0.03, _parse_float, "goal acceptance radius"),
    FieldSpec("algorithm.strategy", Strategy.SWAP_CRITICS, _parse_strategy, "exchange strategy"),
    FieldSpec("algorithm.models", 2, _parse_int, "number of parallel learners"),
    FieldSpec("algorithm.swap_every", 20, _parse_int, "iterations between swap barriers"),
    FieldSpec("algorithm.async_sync_period", 10, _parse_int, "iterations between central syncs"),
    FieldSpec("model.hidden_dims", (256, 256), _parse_dims, "MLP hidden layer sizes"),
    FieldSpec("model.log_std_init", None, _parse_log_std, "initial log stddev, or auto"),
    FieldSpec("model.lr", 3e-4, _parse_float, "Adam learning rate"),
    FieldSpec("curriculum.n_new", 200, _parse_int, "fresh candidate starts per iteration"),
    FieldSpec("curriculum.n_old", 100, _parse_int, "replayed archive starts per iteration"),
    FieldSpec("curriculum.n_total", 1000, _parse_int, "brownian buffer size before subsampling"),
    FieldSpec("curriculum.sigma", 0.02, _parse_float, "expansion action noise"),
    FieldSpec("curriculum.r_min", 0.93, _parse_float, "lower return bound for good starts"),
    FieldSpec("curriculum.r_max", 0.96, _parse_float, "upper return bound for good starts"),
    FieldSpec("curriculum.rollouts_per_start", 24, _parse_int, "rollouts per return estimate"),
    FieldSpec("curriculum.estimator", "montecarlo", _parse_str, "montecarlo or bootstrap"),
    FieldSpec("ppo.clip_epsilon", 0.2, _parse_float, "surrogate clip width"),
    FieldSpec("ppo.epochs_per_update", 10, _parse_int, "passes over each batch"),
    FieldSpec("ppo.minibatch_size", 256, _parse_int, "minibatch size"),
    FieldSpec("ppo.gae_lambda", 0.95, _parse_float, "advantage estimation lambda"),
    FieldSpec("ppo.value_loss_coeff", 0.5, _parse_float, "critic loss weight"),
    FieldSpec("ppo.batch_size", 2056, _parse_int, "environment steps per update"),
    FieldSpec("ppo.max_grad_norm", 0.5, _parse_optional_float, "gradient norm cap, or none"),
    FieldSpec("ppo.target_kl", 0.015, _parse_optional_float, "divergence early-stop target, or none"),
)

_BY_KEY: dict[str, FieldSpec] = {f.key: f for f in SCHEMA}

# short CLI aliases from the external interface, mapped onto schema keys
CLI_ALIASES: dict[str, str] = {
    "seed": "run.master_seed",
    "env": "env.name",
    "strategy": "algorithm.strategy",
    "models": "algorithm.models",
    "swap-every": "algorithm.swap_every",
    "iterations": "run.iterations",
    "out": "run.output_dir",
}


def parse_config_file(path) -> dict[str, str]:
    """Read `key = value` lines; blank lines and # comments are skipped."""
    raw: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = stripped.partition("=")
            key = key.strip()
            if key not in _BY_KEY:
                raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
            raw[key] = value.strip()
    return raw


class ExperimentConfig:
    """Immutable snapshot of every setting, with builders for the sub-configs."""

    def __init__(self, overrides: Mapping[str, object] | None = None):
        values = {f.key: f.default for f in SCHEMA}
        for key, value in (overrides or {}).items():
            if key not in _BY_KEY:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[key] = _BY_KEY[key].parse(value) if isinstance(value, str) else value
        self._values = values

    @classmethod
    def from_sources(
        cls,
        file_path=None,
        cli_overrides: Mapping[str, object] | None = None,
    ) -> "ExperimentConfig":
        """Defaults, then the config file, then CLI values, later wins."""
        merged: dict[str, object] = {}
        if file_path is not None:
            merged.update(parse_config_file(file_path))
        merged.update(cli_overrides or {})
        return cls(merged)

    def get(self, key: str):
        if key not in self._values:
            raise ConfigurationError(f"unknown config key {key!r}")
        return self._values[key]

    def with_updates(self, updates: Mapping[str, object]) -> "ExperimentConfig":
        merged = dict(self._values)
        for key, value in updates.items():
            if key not in _BY_KEY:
                raise ConfigurationError(f"unknown config key {key!r}")
            merged[key] = _BY_KEY[key].parse(value) if isinstance(value, str) else value
        return ExperimentConfig(merged)

    def items(self) -> list[tuple[str, object]]:
        return sorted(self._values.items())

    # builders; each constructs the real object so validation runs eagerly

    def build_env(self) -> PlanarEnv:
        return make_env(
            self.get("env.name"),
            t_max=self.get("env.t_max"),
            gamma=self.get("env.gamma"),
            goal_radius=self.get("env.goal_radius"),
        )

    def build_curriculum(self) -> CurriculumConfig:
        return CurriculumConfig(
            n_new=self.get("curriculum.n_new"),
            n_old=self.get("curriculum.n_old"),
            n_total=self.get("curriculum.n_total"),
            sigma=self.get("curriculum.sigma"),
            r_min=self.get("curriculum.r_min"),
            r_max=self.get("curriculum.r_max"),
            rollouts_per_start=self.get("curriculum.rollouts_per_start"),
            estimator=self.get("curriculum.estimator"),
        )

    def build_ppo(self) -> PpoConfig:
        return PpoConfig(
            clip_epsilon=self.get("ppo.clip_epsilon"),
            epochs_per_update=self.get("ppo.epochs_per_update"),
            minibatch_size=self.get("ppo.minibatch_size"),
            gae_lambda=self.get("ppo.gae_lambda"),
            value_loss_coeff=self.get("ppo.value_loss_coeff"),
            gamma=self.get("env.gamma"),
            batch_size=self.get("ppo.batch_size"),
            max_grad_norm=self.get("ppo.max_grad_norm"),
            target_kl=self.get("ppo.target_kl"),
        )

    def build_schedule(self) -> SwapSchedule:
        return SwapSchedule(
            strategy=self.get("algorithm.strategy"),
            k=self.get("algorithm.swap_every"),
            async_sync_period=self.get("algorithm.async_sync_period"),
        )

    def model_kwargs(self) -> dict:
        return {
            "hidden_dims": self.get("model.hidden_dims"),
            "log_std_init": self.get("model.log_std_init"),
            "lr": self.get("model.lr"),
        }

    def validate(self) -> None:
        """Construct every sub-config; raises ConfigurationError on any bad value."""
        for key in ("run.iterations", "run.eval_every", "run.eval_episodes_per_band",
                    "run.checkpoint_every", "algorithm.models"):
            if self.get(key) < 1:
                raise ConfigurationError(f"{key} must be at least 1, got {self.get(key)}")
        if self.get("run.master_seed") < 0:
            raise ConfigurationError("run.master_seed must be nonnegative")
        if self.get("model.lr") <= 0.0:
            raise ConfigurationError("model.lr must be positive")
        log_std = self.get("model.log_std_init")
        if log_std is not None and not np.isfinite(log_std):
            raise ConfigurationError("model.log_std_init must be finite or auto")
        self.build_env()
        self.build_curriculum()
        self.build_ppo()
        self.build_schedule()

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self._values == other._values

    def __repr__(self) -> str:
        name = self.get("env.name")
        strategy = self.get("algorithm.strategy").value
        return f"ExperimentConfig(env={name}, strategy={strategy}, m={self.get('algorithm.models')})"
