"""Sparse-reward planar point environments with reset-to-state support.

Each environment is a box world with axis-aligned rectangular obstacles, a
set of goal points with a capture radius, and bounded per-step displacement
actions. Reward is binary and terminal: 1 exactly when the post-move state
lies within the goal radius. Movement that would cross an obstacle or leave
the domain stops at the boundary, so every state an episode visits stays
feasible, which the curriculum relies on when it harvests visited states.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, ResetError, UsageError


class DoneReason(Enum):
    GOAL_REACHED = "goal_reached"
    HORIZON_EXCEEDED = "horizon_exceeded"
    ATTEMPT_TRIGGERED = "attempt_triggered"
    NOT_DONE = "not_done"


class Band(Enum):
    NEAR = "near"
    MID = "mid"
    FAR = "far"


class PoseMode(Enum):
    FIXED = "fixed"
    VARIABLE = "variable"


@dataclass(frozen=True)
class EvalBand:
    band: Band
    pose_mode: PoseMode


# evaluation grid: three distance bands crossed with fixed/variable starts
EVAL_GRID: tuple[EvalBand, ...] = tuple(
    EvalBand(band, mode)
    for band in (Band.NEAR, Band.MID, Band.FAR)
    for mode in (PoseMode.FIXED, PoseMode.VARIABLE)
)


@dataclass(frozen=True)
class Bands:
    """Distance-to-goal intervals; near is closed, the others half-open (lo, hi]."""

    near: tuple[float, float] = (0.0, 0.15)
    mid: tuple[float, float] = (0.15, 0.35)
    far: tuple[float, float] = (0.35, 0.7)

    def interval(self, band: Band) -> tuple[float, float]:
        return {Band.NEAR: self.near, Band.MID: self.mid, Band.FAR: self.far}[band]

    def contains(self, band: Band, distances: np.ndarray) -> np.ndarray:
        lo, hi = self.interval(band)
        distances = np.asarray(distances)
        if band is Band.NEAR:
            return (distances >= lo) & (distances <= hi)
        return (distances > lo) & (distances <= hi)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned obstacle; only its open interior is infeasible."""

    low: tuple[float, float]
    high: tuple[float, float]

    def __post_init__(self):
        if not all(l < h for l, h in zip(self.low, self.high)):
            raise ConfigurationError(f"degenerate obstacle {self.low}..{self.high}")


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    t_max: int = 10
    gamma: float = 0.99
    goal_states: tuple[tuple[float, ...], ...] = ()
    goal_radius: float = 0.03

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ConfigurationError("state_dim and action_dim must be positive")
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ConfigurationError("action bounds must match action_dim")
        if not all(l < h for l, h in zip(self.action_low, self.action_high)):
            raise ConfigurationError("action_low must be strictly below action_high")
        if self.t_max < 1:
            raise ConfigurationError("t_max must be at least 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if not self.goal_states:
            raise ConfigurationError("at least one goal state is required")
        if self.goal_radius <= 0.0:
            raise ConfigurationError("goal_radius must be positive")


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool
    done_reason: DoneReason


class PlanarEnv:
    """Point robot in a box with rectangular walls and a terminal goal check."""

    def __init__(
        self,
        name: str,
        spec: EnvSpec,
        bounds_low: tuple[float, float] = (0.0, 0.0),
        bounds_high: tuple[float, float] = (1.0, 1.0),
        obstacles: tuple[Rect, ...] = (),
        bands: Bands = Bands(),
        fixed_starts: dict[Band, tuple[float, float]] | None = None,
    ):
        self.name = name
        self.spec = spec
        self.bounds_low = np.asarray(bounds_low, dtype=np.float64)
        self.bounds_high = np.asarray(bounds_high, dtype=np.float64)
        self.obstacles = tuple(obstacles)
        self.bands = bands
        self.action_low = np.asarray(spec.action_low, dtype=np.float64)
        self.action_high = np.asarray(spec.action_high, dtype=np.float64)
        self.goals = np.asarray(spec.goal_states, dtype=np.float64)
        self._fixed_starts = dict(fixed_starts or {})
        for band, state in self._fixed_starts.items():
            st = np.asarray(state, dtype=np.float64)
            if not self.is_feasible(st):
                raise ConfigurationError(f"fixed start for {band} is infeasible: {state}")
            if not bool(self.bands.contains(band, self.goal_distance(st[None]))[0]):
                raise ConfigurationError(f"fixed start for {band} lies outside its band")
        self._state: np.ndarray | None = None
        self._steps = 0
        self._done = False

    # -- feasibility and geometry ------------------------------------------

    def feasible_mask(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        ok = np.all((states >= self.bounds_low) & (states <= self.bounds_high), axis=1)
        for rect in self.obstacles:
            lo = np.asarray(rect.low)
            hi = np.asarray(rect.high)
            inside = np.all((states > lo) & (states < hi), axis=1)
            ok &= ~inside
        return ok

    def is_feasible(self, state: np.ndarray) -> bool:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.spec.state_dim,):
            return False
        return bool(self.feasible_mask(state[None])[0])

    def goal_distance(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        diffs = states[:, None, :] - self.goals[None, :, :]
        return np.sqrt(np.sum(diffs * diffs, axis=2)).min(axis=1)

    def in_goal(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            return self.goal_distance(states[None])[0] <= self.spec.goal_radius
        return self.goal_distance(states) <= self.spec.goal_radius

    def move(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Vectorized one-step kinematics: clip actions, stop at the first wall.

        Used by step() and by batched rollout helpers, so there is a single
        collision code path. Returns feasible next states for feasible inputs.
        """
        S = np.asarray(states, dtype=np.float64)
        A = np.clip(np.asarray(actions, dtype=np.float64), self.action_low, self.action_high)
        t_limit = np.minimum(1.0, self._domain_limit(S, A))
        for rect in self.obstacles:
            t_limit = np.minimum(t_limit, self._block_time(S, A, rect))
        nxt = S + t_limit[:, None] * A
        np.clip(nxt, self.bounds_low, self.bounds_high, out=nxt)
        for rect in self.obstacles:
            self._push_out(nxt, rect)
        return nxt

    def _domain_limit(self, S: np.ndarray, A: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = np.where(A > 0.0, (self.bounds_high - S) / A, np.inf)
            t_lo = np.where(A < 0.0, (self.bounds_low - S) / A, np.inf)
        return np.maximum(np.minimum(t_hi, t_lo).min(axis=1), 0.0)

    def _block_time(self, S: np.ndarray, A: np.ndarray, rect: Rect) -> np.ndarray:
        """Earliest parameter along each segment at which it enters the rect interior."""
        lo = np.asarray(rect.low)
        hi = np.asarray(rect.high)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - S) / A
            t2 = (hi - S) / A
        enter = np.minimum(t1, t2)
        leave = np.maximum(t1, t2)
        zero = A == 0.0
        inside_slab = (S > lo) & (S < hi)
        enter = np.where(zero, np.where(inside_slab, -np.inf, np.inf), enter)
        leave = np.where(zero, np.where(inside_slab, np.inf, -np.inf), leave)
        t_enter = enter.max(axis=1)
        t_leave = leave.min(axis=1)
        hit = (t_enter < t_leave) & (t_leave > 0.0) & (t_enter <= 1.0)
        return np.where(hit, np.maximum(t_enter, 0.0), np.inf)

    @staticmethod
    def _push_out(points: np.ndarray, rect: Rect) -> None:
        # rounding in t*A can land a hair inside a wall; snap to the nearest face
        lo = np.asarray(rect.low)
        hi = np.asarray(rect.high)
        inside = np.all((points > lo) & (points < hi), axis=1)
        for j in np.flatnonzero(inside):
            gaps = np.concatenate([points[j] - lo, hi - points[j]])
            f = int(gaps.argmin())
            dim = f % points.shape[1]
            points[j, dim] = lo[dim] if f < points.shape[1] else hi[dim]

    # -- episode interface --------------------------------------------------

    def reset_to(self, state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.spec.state_dim,):
            raise ResetError(f"state has shape {state.shape}, env needs ({self.spec.state_dim},)")
        if not self.is_feasible(state):
            raise ResetError(f"infeasible reset state {state.tolist()}")
        self._state = state.copy()
        self._steps = 0
        self._done = False
        return self._state.copy()

    def observe(self) -> np.ndarray:
        if self._state is None:
            raise UsageError("observe() before reset_to()")
        return self._state.copy()

    def step(self, action: np.ndarray) -> StepResult:
        if self._state is None:
            raise UsageError("step() before reset_to()")
        if self._done:
            raise UsageError("step() after the episode ended")
        nxt = self.move(self._state[None], np.asarray(action, dtype=np.float64)[None])[0]
        self._steps += 1
        reward = 1.0 if bool(self.in_goal(nxt)) else 0.0
        if reward == 1.0:
            done, reason = True, DoneReason.GOAL_REACHED
        elif self._steps >= self.spec.t_max:
            done, reason = True, DoneReason.HORIZON_EXCEEDED
        else:
            done, reason = False, DoneReason.NOT_DONE
        self._state = nxt
        self._done = done
        return StepResult(nxt.copy(), reward, done, reason)

    def clone(self) -> "PlanarEnv":
        return PlanarEnv(
            self.name,
            self.spec,
            tuple(self.bounds_low),
            tuple(self.bounds_high),
            self.obstacles,
            self.bands,
            self._fixed_starts,
        )

    # -- evaluation starts --------------------------------------------------

    def fixed_start(self, band: Band) -> np.ndarray:
        if band not in self._fixed_starts:
            raise ConfigurationError(f"{self.name} has no fixed start for band {band.value}")
        return np.asarray(self._fixed_starts[band], dtype=np.float64)

    def sample_eval_starts(
        self, eval_band: EvalBand, n: int, rng: np.random.Generator
    ) -> np.ndarray:
        if n < 1:
            raise ConfigurationError("need at least one evaluation start")
        if eval_band.pose_mode is PoseMode.FIXED:
            return np.tile(self.fixed_start(eval_band.band), (n, 1))
        accepted: list[np.ndarray] = []
        drawn = 0
        cap = 100_000
        while len(accepted) < n:
            if drawn >= cap:
                raise ConfigurationError(
                    f"could not sample band {eval_band.band.value} starts on {self.name} "
                    f"after {cap} draws; the band may be empty"
                )
            batch = min(max(4 * n, 256), cap - drawn)
            drawn += batch
            pts = rng.uniform(self.bounds_low, self.bounds_high, size=(batch, self.spec.state_dim))
            ok = self.feasible_mask(pts) & self.bands.contains(
                eval_band.band, self.goal_distance(pts)
            )
            accepted.extend(pts[ok])
        return np.asarray(accepted[:n], dtype=np.float64)


# ---------------------------------------------------------------------------
# Built-in environments


_ACTION_BOUND = 0.05


def _planar_spec(goals, t_max, gamma, goal_radius) -> EnvSpec:
    return EnvSpec(
        state_dim=2,
        action_dim=2,
        action_low=(-_ACTION_BOUND, -_ACTION_BOUND),
        action_high=(_ACTION_BOUND, _ACTION_BOUND),
        t_max=t_max,
        gamma=gamma,
        goal_states=tuple(tuple(g) for g in goals),
        goal_radius=goal_radius,
    )


def _build_pointmaze_open(t_max, gamma, goal_radius) -> PlanarEnv:
    goal = (0.8, 0.2)
    r = 0.5 / np.sqrt(2.0)
    return PlanarEnv(
        "pointmaze-open",
        _planar_spec([goal], t_max, gamma, goal_radius),
        fixed_starts={
            Band.NEAR: (goal[0] - 0.1 / np.sqrt(2.0), goal[1] + 0.1 / np.sqrt(2.0)),
            Band.MID: (goal[0] - 0.25 / np.sqrt(2.0), goal[1] + 0.25 / np.sqrt(2.0)),
            Band.FAR: (goal[0] - r, goal[1] + r),
        },
    )


def _build_pointmaze(t_max, gamma, goal_radius) -> PlanarEnv:
    # wall across the lower part of the square; the gap above y=0.62 is the
    # only way from the left region to the goal side
    goal = (0.8, 0.2)
    return PlanarEnv(
        "pointmaze",
        _planar_spec([goal], t_max, gamma, goal_radius),
        obstacles=(Rect((0.40, -0.01), (0.44, 0.62)),),
        fixed_starts={
            Band.NEAR: (goal[0] - 0.1 / np.sqrt(2.0), goal[1] + 0.1 / np.sqrt(2.0)),
            Band.MID: (goal[0] - 0.25 / np.sqrt(2.0), goal[1] + 0.25 / np.sqrt(2.0)),
            Band.FAR: (0.5, 0.6),
        },
    )


def _build_narrowpassage(t_max, gamma, goal_radius) -> PlanarEnv:
    # full-height wall with a width-0.06 corridor at mid height; the goal sits
    # behind the corridor, so starts on the right must thread the passage
    goal = (0.3, 0.5)
    return PlanarEnv(
        "narrowpassage",
        _planar_spec([goal], t_max, gamma, goal_radius),
        obstacles=(
            Rect((0.47, -0.01), (0.53, 0.47)),
            Rect((0.47, 0.53), (0.53, 1.01)),
        ),
        fixed_starts={
            Band.NEAR: (0.4, 0.5),
            Band.MID: (0.55, 0.5),
            Band.FAR: (0.8, 0.5),
        },
    )


_BUILDERS = {
    "pointmaze-open": _build_pointmaze_open,
    "pointmaze": _build_pointmaze,
    "narrowpassage": _build_narrowpassage,
}


def env_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILDERS))


def make_env(
    name: str, *, t_max: int = 10, gamma: float = 0.99, goal_radius: float = 0.03
) -> PlanarEnv:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown environment {name!r}; available: {', '.join(env_names())}"
        ) from None
    return builder(t_max, gamma, goal_radius)
