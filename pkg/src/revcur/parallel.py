"""Multi-learner training loop and every inter-model exchange strategy.

m actor-critic learners run expansion, rollout, and update phases in
lockstep. All cross-model traffic happens at the end-of-iteration barrier:
critic or pool swaps between random pairs every k iterations, shared-pool
writes, or delta absorption into a central parameter copy for the
asynchronous-sync emulation. Phases 1 and 2 touch only per-model state, so
executing them serially or on parallel workers gives identical results.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .curriculum import CurriculumConfig, StartPool, curriculum_iteration, discounted_return
from .envs import EVAL_GRID, Band, DoneReason, PlanarEnv, PoseMode
from .errors import ConfigurationError
from .nets import GaussianPolicy, clamp_log_std
from .ppo import ActorCritic, PpoConfig, collect_rollouts, mean_batch_return, ppo_update


class Strategy(Enum):
    SWAP_CRITICS = "swap-critics"
    SWAP_INIT_POOLS = "swap-pools"
    COMMON_POOL_SWAP_CRITICS = "common-pool-swap-critics"
    COMMON_POOL_NO_SWAP = "common-pool"
    NO_EXCHANGE = "no-exchange"
    ASYNC_SYNC = "async-sync"
    ENSEMBLE = "ensemble"


_SWAP_STRATEGIES = frozenset(
    {Strategy.SWAP_CRITICS, Strategy.SWAP_INIT_POOLS, Strategy.COMMON_POOL_SWAP_CRITICS}
)
_SHARED_POOL_STRATEGIES = frozenset(
    {Strategy.COMMON_POOL_SWAP_CRITICS, Strategy.COMMON_POOL_NO_SWAP}
)


@dataclass(frozen=True)
class SwapSchedule:
    """When and what to exchange: swap every k iterations, sync every period."""

    strategy: Strategy = Strategy.SWAP_CRITICS
    k: int = 20
    async_sync_period: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("exchange rate k must be at least 1")
        if self.async_sync_period < 1:
            raise ConfigurationError("async_sync_period must be at least 1")

    @property
    def needs_even_models(self) -> bool:
        return self.strategy in _SWAP_STRATEGIES

    @property
    def shares_pools(self) -> bool:
        return self.strategy in _SHARED_POOL_STRATEGIES


@dataclass(frozen=True)
class PairingPlan:
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen = [i for pair in self.pairs for i in pair]
        if len(seen) != len(set(seen)):
            raise ConfigurationError("pairing reuses a model index")
        if any(i == j for i, j in self.pairs):
            raise ConfigurationError("a model cannot pair with itself")

    def validate_for(self, m: int) -> None:
        indices = {i for pair in self.pairs for i in pair}
        if indices != set(range(m)):
            raise ConfigurationError(f"pairing {self.pairs} is not a perfect matching on {m} models")


def make_pairing(m: int, rng: np.random.Generator) -> PairingPlan:
    """Uniform random perfect matching on model indices 0..m-1.

    A uniform permutation folded into consecutive pairs hits every matching
    with equal probability, since each matching is the image of the same
    number of permutations.
    """
    if m < 2 or m % 2:
        raise ConfigurationError(f"pairing needs a positive even model count, got {m}")
    perm = rng.permutation(m)
    return PairingPlan(tuple((int(perm[i]), int(perm[i + 1])) for i in range(0, m, 2)))


def swap_critics(model_set: "ModelSet", plan: PairingPlan) -> "ModelSet":
    """Exchange critic parameters and their optimizer state within each pair."""
    plan.validate_for(model_set.m)
    for i, j in plan.pairs:
        a, b = model_set.models[i], model_set.models[j]
        a.critic_params, b.critic_params = b.critic_params, a.critic_params
        a.opt_critic, b.opt_critic = b.opt_critic, a.opt_critic
    return model_set


def swap_pools(model_set: "ModelSet", plan: PairingPlan) -> "ModelSet":
    """Exchange both start pools (working and archive) within each pair."""
    if model_set.shared_pools:
        raise ConfigurationError("pool swap requires per-model pools")
    plan.validate_for(model_set.m)
    for i, j in plan.pairs:
        model_set.working[i], model_set.working[j] = model_set.working[j], model_set.working[i]
        model_set.archive[i], model_set.archive[j] = model_set.archive[j], model_set.archive[i]
    return model_set


@dataclass
class ModelSet:
    """m learners with their pools and private random streams.

    Pool lists hold one entry per model, or a single shared entry when
    shared_pools is set; pool_slot maps a model index to its entry. Random
    streams never cross models, so per-model work is order-independent.
    """

    models: list[ActorCritic]
    working: list[StartPool]
    archive: list[StartPool]
    rngs: list[np.random.Generator]
    shared_pools: bool = False
    iteration: int = 0

    def __post_init__(self):
        if not self.models:
            raise ConfigurationError("need at least one model")
        want = 1 if self.shared_pools else self.m
        if len(self.working) != want or len(self.archive) != want:
            raise ConfigurationError(
                f"expected {want} pool entr{'y' if want == 1 else 'ies'}, "
                f"got {len(self.working)} working / {len(self.archive)} archive"
            )
        if len(self.rngs) != self.m:
            raise ConfigurationError("need one random stream per model")

    @property
    def m(self) -> int:
        return len(self.models)

    def pool_slot(self, i: int) -> int:
        return 0 if self.shared_pools else i

    @classmethod
    def initialize(
        cls,
        env: PlanarEnv,
        m: int,
        rngs: Sequence[np.random.Generator],
        hidden_dims: tuple[int, ...] = (256, 256),
        log_std_init: float | None = None,
        lr: float = 3e-4,
        shared_pools: bool = False,
        share_init: bool = False,
    ) -> "ModelSet":
        """Fresh learners with goal-seeded pools.

        log_std_init of None means a quarter of the smallest action range.
        share_init clones model 0's parameters into every learner, which the
        central-copy strategy needs so its deltas share a reference point.
        """
        if m < 1:
            raise ConfigurationError("need at least one model")
        if len(rngs) != m:
            raise ConfigurationError("need one random stream per model")
        spec = env.spec
        if log_std_init is None:
            spans = np.asarray(spec.action_high) - np.asarray(spec.action_low)
            log_std_init = float(np.log(spans.min() / 4.0))
        models = []
        for i in range(m):
            if share_init and i > 0:
                models.append(models[0].copy())
            else:
                models.append(
                    ActorCritic.initialize(
                        state_dim=spec.state_dim,
                        action_dim=spec.action_dim,
                        hidden_dims=hidden_dims,
                        log_std_init=log_std_init,
                        lr=lr,
                        rng=rngs[i],
                    )
                )
        n_pools = 1 if shared_pools else m
        goals = [g.copy() for g in env.goals]
        working = [StartPool(goals, 0) for _ in range(n_pools)]
        archive = [StartPool(goals, 0) for _ in range(n_pools)]
        return cls(models, working, archive, list(rngs), shared_pools=shared_pools)


@dataclass(frozen=True)
class SwapEvent:
    iteration: int
    kind: str  # "critics", "pools", or "sync"
    pairs: tuple[tuple[int, int], ...] | None


@dataclass(frozen=True)
class IterationRecord:
    """Training-side metrics for one model over one iteration."""

    iteration: int
    model_id: int
    episodes: int
    success_rate: float
    mean_return: float
    pool_size: int
    archive_size: int
    n_candidates: int
    n_survivors: int
    fell_back: bool
    actor_loss: float
    critic_loss: float
    clip_fraction: float
    aborted: bool


@dataclass(frozen=True)
class GridCell:
    """One cell of the six-way evaluation: a distance band under one pose mode."""

    band: Band
    pose_mode: PoseMode
    success_rate: float
    mean_return: float
    episodes: int


@dataclass(frozen=True)
class SelectionReport:
    best_index: int
    scores: tuple[float, ...]
    tables: tuple[tuple[GridCell, ...], ...]


@dataclass
class TrainResult:
    model_set: ModelSet
    best_policy: object
    best_index: int | None
    selection: SelectionReport | None
    records: list[IterationRecord]
    swap_events: list[SwapEvent]


def evaluate_grid(
    env: PlanarEnv,
    policy,
    episodes_per_band: int,
    rng: np.random.Generator,
    stochastic: bool = False,
) -> list[GridCell]:
    """Run the six-cell start grid and score one policy on a cloned env.

    Episodes follow the mean action unless stochastic is set. Committee
    policies pick their member once per episode via for_episode.
    """
    rows = []
    for cell in EVAL_GRID:
        starts = env.sample_eval_starts(cell, episodes_per_band, rng)
        successes = 0
        returns = []
        for s0 in starts:
            sandbox = env.clone()
            state = sandbox.reset_to(s0)
            actor = policy.for_episode(state)
            rewards = []
            done = False
            while not done:
                action = actor.sample(state, rng)[0] if stochastic else actor.mean_action(state)
                result = sandbox.step(action)
                rewards.append(result.reward)
                state = result.next_state
                done = result.done
            returns.append(discounted_return(np.asarray(rewards), env.spec.gamma))
            successes += rewards[-1] > 0.0
        rows.append(
            GridCell(
                band=cell.band,
                pose_mode=cell.pose_mode,
                success_rate=successes / len(starts),
                mean_return=float(np.mean(returns)),
                episodes=len(starts),
            )
        )
    return rows


def select_best(
    model_set: ModelSet, env: PlanarEnv, episodes_per_band: int, rng: np.random.Generator
) -> SelectionReport:
    """Grid-evaluate every model; highest mean success wins, ties to lowest index."""
    tables = []
    scores = []
    for model in model_set.models:
        rows = evaluate_grid(env, model.policy, episodes_per_band, rng)
        tables.append(tuple(rows))
        scores.append(float(np.mean([r.success_rate for r in rows])))
    return SelectionReport(
        best_index=int(np.argmax(scores)), scores=tuple(scores), tables=tuple(tables)
    )


class EnsemblePolicy:
    """Committee that follows one member per episode.

    The arbiter picks the member at the episode's first state; the default
    asks each model's own critic and takes the argmax, ties to the lowest
    index. The chosen member then acts for the whole episode.
    """

    def __init__(self, models: Sequence[ActorCritic], arbiter: Callable | None = None):
        if len(models) < 2:
            raise ConfigurationError("an ensemble needs at least two models")
        self._models = list(models)
        self.members = [m.policy for m in self._models]
        self._arbiter = arbiter if arbiter is not None else self._critic_argmax

    def _critic_argmax(self, state: np.ndarray) -> int:
        return int(np.argmax([m.value(state) for m in self._models]))

    def choose(self, state: np.ndarray) -> int:
        return self._arbiter(state)

    def for_episode(self, state: np.ndarray) -> GaussianPolicy:
        return self.members[self.choose(state)]

    def mean_action(self, state: np.ndarray) -> np.ndarray:
        return self.for_episode(state).mean_action(state)

    def sample(self, state: np.ndarray, rng: np.random.Generator):
        """(action, log_prob) from the member chosen for this state."""
        return self.for_episode(state).sample(state, rng)


def ensemble_policy(models: Sequence[ActorCritic], arbiter: Callable | None = None) -> EnsemblePolicy:
    return EnsemblePolicy(models, arbiter)


@dataclass
class _ParamVectors:
    mean: np.ndarray
    log_std: np.ndarray
    critic: np.ndarray

    @classmethod
    def of(cls, model: ActorCritic) -> "_ParamVectors":
        return cls(
            model.policy.params.copy(), model.policy.log_std.copy(), model.critic_params.copy()
        )


def _arcg_sync(model_set: ModelSet, central: _ParamVectors, snaps: list[_ParamVectors]) -> None:
    """Absorb every model's parameter delta into the central copy, then broadcast."""
    if model_set.m == 1:
        # a lone learner is the central copy; skip the delta round trip so the
        # sync is a bit-exact no-op rather than central + (p - central)
        model = model_set.models[0]
        central.mean = model.policy.params.copy()
        central.log_std = model.policy.log_std.copy()
        central.critic = model.critic_params.copy()
    else:
        for model, snap in zip(model_set.models, snaps):
            central.mean += model.policy.params - snap.mean
            central.log_std += model.policy.log_std - snap.log_std
            central.critic += model.critic_params - snap.critic
        central.log_std = clamp_log_std(central.log_std)
    for i, model in enumerate(model_set.models):
        model.policy = GaussianPolicy(
            model.policy.spec, central.mean.copy(), central.log_std.copy()
        )
        model.critic_params = central.critic.copy()
        snaps[i] = _ParamVectors.of(model)


def _attach_index(exc: Exception, i: int, iteration: int) -> Exception:
    try:
        return type(exc)(f"model {i}, iteration {iteration}: {exc}")
    except TypeError:  # exception type with a nonstandard constructor
        return exc


def train(
    env_factory: Callable[[], PlanarEnv],
    model_set: ModelSet,
    schedule: SwapSchedule,
    curriculum_config: CurriculumConfig,
    ppo_config: PpoConfig,
    total_iterations: int,
    rng: np.random.Generator,
    select_episodes_per_band: int = 50,
    on_iteration: Callable[[int, ModelSet, list[IterationRecord]], None] | None = None,
) -> TrainResult:
    """Run m learners for total_iterations with the schedule's exchange rule.

    Each iteration: per-model curriculum expansion and rollout collection
    (phase 1), per-model actor-critic updates (phase 2), then the barrier
    (phase 3) where pools shared between models absorb this round's
    survivors and any due exchange fires. The rng argument is the
    orchestration stream: it only draws at barriers and for the final
    selection, so strategies that never exchange never touch it during
    training. on_iteration runs after each barrier.
    """
    if total_iterations < 1:
        raise ConfigurationError("total_iterations must be at least 1")
    m = model_set.m
    if schedule.needs_even_models and m % 2:
        raise ConfigurationError(f"{schedule.strategy.value} needs an even model count, got {m}")
    if schedule.shares_pools != model_set.shared_pools:
        raise ConfigurationError(
            f"{schedule.strategy.value} expects shared_pools={schedule.shares_pools}"
        )
    if schedule.strategy is Strategy.ENSEMBLE and m < 2:
        raise ConfigurationError("ensemble strategy needs at least two models")

    envs = [env_factory() for _ in range(m)]
    records: list[IterationRecord] = []
    swap_events: list[SwapEvent] = []
    central: _ParamVectors | None = None
    snaps: list[_ParamVectors] = []
    if schedule.strategy is Strategy.ASYNC_SYNC:
        central = _ParamVectors.of(model_set.models[0])
        snaps = [_ParamVectors.of(model) for model in model_set.models]

    for _ in range(total_iterations):
        iteration = model_set.iteration + 1

        # phase 1: expansion and rollouts, per-model state only
        batches = []
        diags = []
        survivors_by_model: list[list[np.ndarray]] = []
        for i in range(m):
            model = model_set.models[i]
            slot = model_set.pool_slot(i)
            # shared pools: work on a snapshot so every model reads the
            # pre-iteration state; survivors land at the barrier
            archive = model_set.archive[slot].copy() if model_set.shared_pools else model_set.archive[slot]
            try:
                start_list, new_working, diag = curriculum_iteration(
                    envs[i],
                    model.policy,
                    model_set.working[slot],
                    archive,
                    curriculum_config,
                    iteration,
                    model_set.rngs[i],
                    value_fn=model.value,
                )
                batch = collect_rollouts(
                    envs[i],
                    model.policy,
                    model.value,
                    start_list,
                    ppo_config.batch_size,
                    model_set.rngs[i],
                )
            except Exception as exc:
                raise _attach_index(exc, i, iteration) from exc
            if not model_set.shared_pools:
                model_set.working[i] = new_working
            survivors_by_model.append([e.start for e in diag.survivor_estimates])
            diags.append(diag)
            batches.append(batch)

        # phase 2: independent optimization
        stats = []
        for i in range(m):
            try:
                stats.append(ppo_update(model_set.models[i], batches[i], ppo_config, model_set.rngs[i]))
            except Exception as exc:
                raise _attach_index(exc, i, iteration) from exc

        # phase 3: barrier
        if model_set.shared_pools:
            merged = [s for surv in survivors_by_model for s in surv]
            model_set.archive[0].extend(merged, iteration)
            if merged:
                model_set.working[0] = StartPool(merged, iteration)
        if schedule.strategy in (Strategy.SWAP_CRITICS, Strategy.COMMON_POOL_SWAP_CRITICS):
            if iteration % schedule.k == 0:
                plan = make_pairing(m, rng)
                swap_critics(model_set, plan)
                swap_events.append(SwapEvent(iteration, "critics", plan.pairs))
        elif schedule.strategy is Strategy.SWAP_INIT_POOLS:
            if iteration % schedule.k == 0:
                plan = make_pairing(m, rng)
                swap_pools(model_set, plan)
                swap_events.append(SwapEvent(iteration, "pools", plan.pairs))
        elif schedule.strategy is Strategy.ASYNC_SYNC:
            if iteration % schedule.async_sync_period == 0:
                _arcg_sync(model_set, central, snaps)
                swap_events.append(SwapEvent(iteration, "sync", None))

        model_set.iteration = iteration
        iteration_records = []
        for i in range(m):
            slot = model_set.pool_slot(i)
            trajectories = batches[i].trajectories
            wins = sum(t.done_reason is DoneReason.GOAL_REACHED for t in trajectories)
            iteration_records.append(
                IterationRecord(
                    iteration=iteration,
                    model_id=i,
                    episodes=len(trajectories),
                    success_rate=wins / len(trajectories),
                    mean_return=mean_batch_return(batches[i], ppo_config.gamma),
                    pool_size=len(model_set.working[slot]),
                    archive_size=len(model_set.archive[slot]),
                    n_candidates=diags[i].n_candidates,
                    n_survivors=diags[i].n_survivors,
                    fell_back=diags[i].fell_back,
                    actor_loss=stats[i]["actor_loss"],
                    critic_loss=stats[i]["critic_loss"],
                    clip_fraction=stats[i]["clip_fraction"],
                    aborted=stats[i]["aborted"],
                )
            )
        records.extend(iteration_records)
        if on_iteration is not None:
            on_iteration(iteration, model_set, iteration_records)

    if schedule.strategy is Strategy.ENSEMBLE:
        best_policy: object = ensemble_policy(model_set.models)
        return TrainResult(model_set, best_policy, None, None, records, swap_events)
    report = select_best(model_set, envs[0], select_episodes_per_band, rng)
    best_policy = model_set.models[report.best_index].policy
    return TrainResult(model_set, best_policy, report.best_index, report, records, swap_events)
