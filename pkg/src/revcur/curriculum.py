"""Start-state curriculum: brownian expansion, return estimation, filtering.

The working pool holds the starts a learner trains from this iteration; the
archive pool accumulates every start that ever passed the return filter.
Each iteration expands the working pool by random-action episodes seeded
from it, mixes in replayed archive states, scores every distinct start by
Monte-Carlo policy return, and keeps the ones whose estimate falls strictly
between the filter bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .envs import PlanarEnv
from .errors import ConfigurationError, UsageError
from .nets import GaussianPolicy

R_MIN_DEFAULT = 0.93
R_MAX_DEFAULT = 0.96


@dataclass(frozen=True)
class CurriculumConfig:
    """Knobs for one expansion-and-filter round."""

    n_new: int = 200
    n_old: int = 100
    n_total: int = 1000
    sigma: float = 0.02
    r_min: float = R_MIN_DEFAULT
    r_max: float = R_MAX_DEFAULT
    rollouts_per_start: int = 24
    estimator: str = "montecarlo"

    def __post_init__(self):
        if self.n_new < 1 or self.n_old < 0 or self.n_total < 1:
            raise ConfigurationError("pool sizes must be positive")
        if self.n_total < self.n_new:
            raise ConfigurationError("n_total must be at least n_new")
        if self.sigma <= 0.0:
            raise ConfigurationError("sigma must be positive")
        if not 0.0 <= self.r_min < self.r_max <= 1.0:
            raise ConfigurationError(
                f"need 0 <= r_min < r_max <= 1, got ({self.r_min}, {self.r_max})"
            )
        if self.rollouts_per_start < 1:
            raise ConfigurationError("rollouts_per_start must be positive")
        if self.estimator not in ("montecarlo", "bootstrap"):
            raise ConfigurationError(f"unknown return estimator {self.estimator!r}")


class StartPool:
    """Append-only list of start states tagged with the iteration that added them."""

    def __init__(self, states: Sequence[np.ndarray] = (), iteration: int = 0):
        self._states: list[np.ndarray] = []
        self._iterations: list[int] = []
        self.extend(states, iteration)

    def extend(self, states: Sequence[np.ndarray], iteration: int) -> None:
        if self._iterations and self._iterations[-1] > iteration:
            raise UsageError("pool iteration tags must be nondecreasing")
        for s in states:
            self._states.append(np.asarray(s, dtype=np.float64).copy())
            self._iterations.append(iteration)

    def sample(self, n: int, rng: np.random.Generator) -> list[np.ndarray]:
        """Uniform draw with replacement."""
        if not self._states:
            raise UsageError("cannot sample from an empty pool")
        idx = rng.integers(0, len(self._states), size=n)
        return [self._states[i].copy() for i in idx]

    @property
    def states(self) -> list[np.ndarray]:
        return [s.copy() for s in self._states]

    def states_array(self) -> np.ndarray:
        if not self._states:
            return np.empty((0, 0))
        return np.stack(self._states)

    @property
    def iteration_tags(self) -> list[int]:
        return list(self._iterations)

    def entries(self) -> list[tuple[np.ndarray, int]]:
        return [(s.copy(), it) for s, it in zip(self._states, self._iterations)]

    def copy(self) -> "StartPool":
        out = StartPool()
        out._states = [s.copy() for s in self._states]
        out._iterations = list(self._iterations)
        return out

    def __len__(self) -> int:
        return len(self._states)


@dataclass(frozen=True)
class ReturnEstimate:
    start: np.ndarray
    r_hat: float
    successes: int
    rollouts: int


@dataclass
class CurriculumDiagnostics:
    """Per-iteration bookkeeping the trainer logs and exports."""

    iteration: int
    n_candidates: int
    n_survivors: int
    fell_back: bool
    estimates: list[ReturnEstimate]
    survivor_estimates: list[ReturnEstimate]


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """Return with the k-th step's reward discounted by gamma**k (k starts at 1)."""
    return float(sum(gamma ** (k + 1) * r for k, r in enumerate(rewards)))


def stable_mean(values: np.ndarray) -> float:
    """Shifted compensated mean; exact when every value is identical."""
    if len(values) == 0:
        raise UsageError("mean of an empty sequence")
    c = float(values[0])
    return c + math.fsum(float(v) - c for v in values) / len(values)


def sample_nearby(
    env: PlanarEnv,
    seeds: Sequence[np.ndarray],
    n_total: int,
    sigma: float | np.ndarray,
    n_new: int,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Grow a buffer of states by random-action episodes, then subsample it.

    Starting from the seed states, repeatedly picks a uniform buffer element,
    rolls one episode with zero-mean Gaussian actions, and appends every state
    the episode visits. Stops once the buffer holds n_total states and returns
    n_new of them drawn uniformly without replacement.
    """
    if not len(seeds):
        raise UsageError("sample_nearby needs at least one seed state")
    if n_new > n_total:
        raise ConfigurationError("n_new cannot exceed n_total")
    buffer = []
    for s in seeds:
        s = np.asarray(s, dtype=np.float64)
        if not env.is_feasible(s):
            raise UsageError(f"infeasible seed state {s.tolist()}")
        buffer.append(s.copy())
    action_dim = env.spec.action_dim
    while len(buffer) < n_total:
        seed = buffer[int(rng.integers(len(buffer)))]
        env.reset_to(seed)
        done = False
        while not done:
            action = rng.normal(0.0, sigma, size=action_dim)
            res = env.step(action)
            buffer.append(res.next_state)
            done = res.done
    picks = rng.choice(len(buffer), size=n_new, replace=False)
    return [buffer[i] for i in picks]


def _batched_returns(
    env: PlanarEnv,
    policy,
    starts: np.ndarray,
    gamma: float,
    rng: np.random.Generator,
    value_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Roll all episodes in lockstep; returns (discounted returns, success mask).

    Episodes share the env's kinematics via move(), so the semantics match
    running env.step() per episode. With value_fn set, episodes truncated by
    the horizon are credited gamma**t_max times the clipped state value.
    """
    n = len(starts)
    states = np.asarray(starts, dtype=np.float64).copy()
    active = np.ones(n, dtype=bool)
    returns = np.zeros(n, dtype=np.float64)
    success = np.zeros(n, dtype=bool)
    t_max = env.spec.t_max
    for k in range(1, t_max + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        actions, _ = policy.sample_batch(states[idx], rng)
        nxt = env.move(states[idx], actions)
        states[idx] = nxt
        reached = env.in_goal(nxt)
        hit = idx[reached]
        returns[hit] = gamma**k
        success[hit] = True
        active[hit] = False
    if value_fn is not None:
        idx = np.flatnonzero(active)
        if idx.size:
            tail = np.clip(value_fn(states[idx]), 0.0, 1.0)
            returns[idx] = gamma**t_max * tail
    return returns, success


def estimate_returns(
    env: PlanarEnv,
    policy,
    starts: Sequence[np.ndarray],
    config: CurriculumConfig,
    rng: np.random.Generator,
    value_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> list[ReturnEstimate]:
    """Monte-Carlo expected discounted return for each start under the policy."""
    if not len(starts):
        return []
    reps = config.rollouts_per_start
    tiled = np.repeat(np.asarray(starts, dtype=np.float64), reps, axis=0)
    vf = value_fn if config.estimator == "bootstrap" else None
    if config.estimator == "bootstrap" and value_fn is None:
        raise UsageError("bootstrap estimator needs a value function")
    returns, success = _batched_returns(env, policy, tiled, env.spec.gamma, rng, vf)
    out = []
    for i, s in enumerate(starts):
        block = slice(i * reps, (i + 1) * reps)
        r_hat = stable_mean(returns[block])
        out.append(
            ReturnEstimate(
                start=np.asarray(s, dtype=np.float64).copy(),
                r_hat=r_hat,
                successes=int(np.count_nonzero(success[block])),
                rollouts=reps,
            )
        )
    return out


def estimate_return(
    env: PlanarEnv,
    policy,
    start: np.ndarray,
    rollouts_per_start: int,
    rng: np.random.Generator,
) -> ReturnEstimate:
    cfg = CurriculumConfig(rollouts_per_start=rollouts_per_start)
    return estimate_returns(env, policy, [start], cfg, rng)[0]


def select_good_starts(
    estimates: Sequence[ReturnEstimate], r_min: float, r_max: float
) -> list[ReturnEstimate]:
    """Keep starts whose estimated return lies strictly inside (r_min, r_max)."""
    if not 0.0 <= r_min < r_max <= 1.0:
        raise ConfigurationError(f"need 0 <= r_min < r_max <= 1, got ({r_min}, {r_max})")
    return [e for e in estimates if r_min < e.r_hat < r_max]


def _dedup(states: Sequence[np.ndarray]) -> list[np.ndarray]:
    seen = set()
    out = []
    for s in states:
        key = s.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


def curriculum_iteration(
    env: PlanarEnv,
    policy,
    starts: StartPool,
    starts_old: StartPool,
    config: CurriculumConfig,
    iteration: int,
    rng: np.random.Generator,
    value_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[list[np.ndarray], StartPool, CurriculumDiagnostics]:
    """One expansion-estimation-filter round for a single learner.

    Returns the start list to draw training rollouts from, the replacement
    working pool, and diagnostics. The archive pool is extended in place with
    this round's survivors. If no start survives the filter, the working pool
    falls back to n_old fresh draws from the archive.
    """
    fresh = sample_nearby(env, starts.states, config.n_total, config.sigma, config.n_new, rng)
    # states already inside the goal teach nothing and distort the estimates
    fresh = [s for s in fresh if not bool(env.in_goal(s))]
    replay = starts_old.sample(config.n_old, rng) if config.n_old else []
    start_list = fresh + replay
    if not start_list:
        raise UsageError("no candidate starts; pools are degenerate")
    distinct = _dedup(start_list)
    estimates = estimate_returns(env, policy, distinct, config, rng, value_fn)
    survivors = select_good_starts(estimates, config.r_min, config.r_max)
    fell_back = not survivors
    if survivors:
        new_states = [e.start for e in survivors]
    else:
        new_states = starts_old.sample(config.n_old or 1, rng)
    new_working = StartPool(new_states, iteration)
    starts_old.extend([e.start for e in survivors], iteration)
    diag = CurriculumDiagnostics(
        iteration=iteration,
        n_candidates=len(distinct),
        n_survivors=len(survivors),
        fell_back=fell_back,
        estimates=estimates,
        survivor_estimates=list(survivors),
    )
    return start_list, new_working, diag
