"""Clipped-surrogate policy optimization over curriculum-chosen starts.

Rollout collection, generalized advantage estimation, and the update step
for one actor-critic learner. Gradients come from the analytic backprop in
nets.py; the actor's mean net, its log stddev vector, and the critic each
keep their own Adam state.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .curriculum import discounted_return
from .envs import DoneReason, PlanarEnv
from .errors import ConfigurationError, UsageError
from .nets import (
    AdamState,
    GaussianPolicy,
    MlpSpec,
    _backward_cached,
    _forward_cached,
    adam_step,
    clamp_log_std,
    init_params,
    read_network,
    scale_output_layer,
    write_network,
)


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    epochs_per_update: int = 10
    minibatch_size: int = 256
    gae_lambda: float = 0.95
    value_loss_coeff: float = 0.5
    gamma: float = 0.99
    batch_size: int = 2056
    max_grad_norm: float | None = 0.5
    target_kl: float | None = 0.015

    def __post_init__(self):
        if self.clip_epsilon < 0.0:
            raise ConfigurationError("clip_epsilon must be nonnegative")
        if self.epochs_per_update < 1 or self.minibatch_size < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs, minibatch size, and batch size must be positive")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigurationError("gae_lambda must lie in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if self.value_loss_coeff <= 0.0:
            raise ConfigurationError("value_loss_coeff must be positive")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0.0:
            raise ConfigurationError("max_grad_norm must be positive or None")
        if self.target_kl is not None and self.target_kl <= 0.0:
            raise ConfigurationError("target_kl must be positive or None")


@dataclass
class Trajectory:
    """One episode: arrays over its steps plus the terminal bookkeeping."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    final_state: np.ndarray
    done_reason: DoneReason
    bootstrap_value: float

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class RolloutBatch:
    trajectories: list[Trajectory]
    total_steps: int


@dataclass
class ActorCritic:
    """One learner: Gaussian actor, scalar critic, and their optimizer states."""

    policy: GaussianPolicy
    critic_spec: MlpSpec
    critic_params: np.ndarray
    opt_mean: AdamState
    opt_log_std: AdamState
    opt_critic: AdamState

    @classmethod
    def initialize(
        cls,
        state_dim: int,
        action_dim: int,
        hidden_dims: tuple[int, ...],
        log_std_init: float,
        lr: float,
        rng: np.random.Generator,
        head_scale: float = 0.01,
    ) -> "ActorCritic":
        actor_spec = MlpSpec(input_dim=state_dim, output_dim=action_dim, hidden_dims=hidden_dims)
        critic_spec = MlpSpec(input_dim=state_dim, output_dim=1, hidden_dims=hidden_dims)
        policy = GaussianPolicy(
            actor_spec,
            scale_output_layer(actor_spec, init_params(actor_spec, rng), head_scale),
            clamp_log_std(np.full(action_dim, float(log_std_init))),
        )
        return cls(
            policy=policy,
            critic_spec=critic_spec,
            critic_params=init_params(critic_spec, rng),
            opt_mean=AdamState.for_params(actor_spec.param_count, lr=lr),
            opt_log_std=AdamState.for_params(action_dim, lr=lr),
            opt_critic=AdamState.for_params(critic_spec.param_count, lr=lr),
        )

    def value(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        single = states.ndim == 1
        out, _ = _forward_cached(self.critic_spec, self.critic_params, states[None] if single else states)
        return float(out[0, 0]) if single else out[:, 0]

    def copy(self) -> "ActorCritic":
        return ActorCritic(
            policy=self.policy.copy(),
            critic_spec=self.critic_spec,
            critic_params=self.critic_params.copy(),
            opt_mean=self.opt_mean.copy(),
            opt_log_std=self.opt_log_std.copy(),
            opt_critic=self.opt_critic.copy(),
        )


def save_actor_critic(path, model: ActorCritic) -> None:
    """Write actor net, critic net, then the raw log_std vector (count + f8)."""
    with open(path, "wb") as fh:
        write_network(fh, model.policy.spec, model.policy.params)
        write_network(fh, model.critic_spec, model.critic_params)
        log_std = model.policy.log_std
        fh.write(struct.pack("<Q", log_std.size))
        fh.write(np.ascontiguousarray(log_std, dtype="<f8").tobytes())


def load_actor_critic(path, lr: float = 3e-4) -> ActorCritic:
    """Rebuild a model from save_actor_critic output with fresh optimizer state."""
    with open(path, "rb") as fh:
        actor_spec, actor_params = read_network(fh)
        critic_spec, critic_params = read_network(fh)
        head = fh.read(8)
        if len(head) != 8:
            raise ConfigurationError("truncated checkpoint: missing log_std count")
        (count,) = struct.unpack("<Q", head)
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise ConfigurationError("truncated checkpoint: short log_std payload")
    if count != actor_spec.output_dim:
        raise ConfigurationError(
            f"log_std has {count} entries, actor outputs {actor_spec.output_dim}"
        )
    log_std = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return ActorCritic(
        policy=GaussianPolicy(actor_spec, actor_params, log_std),
        critic_spec=critic_spec,
        critic_params=critic_params,
        opt_mean=AdamState.for_params(actor_spec.param_count, lr=lr),
        opt_log_std=AdamState.for_params(actor_spec.output_dim, lr=lr),
        opt_critic=AdamState.for_params(critic_spec.param_count, lr=lr),
    )


def collect_rollouts(
    env: PlanarEnv,
    policy,
    value_fn,
    start_list: Sequence[np.ndarray],
    batch_size: int,
    rng: np.random.Generator,
) -> RolloutBatch:
    """Sample episodes from uniformly drawn starts until the step budget fills.

    Collection stops at the first episode boundary at or after batch_size
    steps. Values and the horizon bootstrap are recorded from the critic at
    collection time.
    """
    if not len(start_list):
        raise UsageError("collect_rollouts needs a nonempty start list")
    if batch_size < 1:
        raise ConfigurationError("batch_size must be positive")
    trajectories: list[Trajectory] = []
    total = 0
    while total < batch_size:
        start = start_list[int(rng.integers(len(start_list)))]
        env.reset_to(start)
        states, actions, rewards, log_probs = [], [], [], []
        s = np.asarray(start, dtype=np.float64).copy()
        done = False
        reason = DoneReason.NOT_DONE
        while not done:
            a, lp = policy.sample(s, rng)
            res = env.step(a)
            states.append(s)
            actions.append(a)
            rewards.append(res.reward)
            log_probs.append(lp)
            s = res.next_state
            done = res.done
            reason = res.done_reason
        stacked = np.stack(states + [s])
        values = np.asarray(value_fn(stacked), dtype=np.float64)
        bootstrap = float(values[-1]) if reason is DoneReason.HORIZON_EXCEEDED else 0.0
        trajectories.append(
            Trajectory(
                states=stacked[:-1],
                actions=np.stack(actions),
                rewards=np.asarray(rewards, dtype=np.float64),
                log_probs=np.asarray(log_probs, dtype=np.float64),
                values=values[:-1],
                final_state=s,
                done_reason=reason,
                bootstrap_value=bootstrap,
            )
        )
        total += len(rewards)
    return RolloutBatch(trajectories=trajectories, total_steps=total)


def compute_advantages(
    batch: RolloutBatch, gamma: float, gae_lambda: float
) -> tuple[np.ndarray, np.ndarray]:
    """GAE advantages and value targets, flattened in trajectory-then-step order.

    The bootstrap beyond each trajectory's last step is zero for terminal
    episodes and the recorded critic value for horizon-truncated ones.
    """
    advantages: list[np.ndarray] = []
    returns: list[np.ndarray] = []
    for traj in batch.trajectories:
        n = len(traj)
        adv = np.zeros(n, dtype=np.float64)
        next_value = traj.bootstrap_value
        carry = 0.0
        for t in range(n - 1, -1, -1):
            delta = traj.rewards[t] + gamma * next_value - traj.values[t]
            carry = delta + gamma * gae_lambda * carry
            adv[t] = carry
            next_value = traj.values[t]
        advantages.append(adv)
        returns.append(adv + traj.values)
    return np.concatenate(advantages), np.concatenate(returns)


def _flatten(batch: RolloutBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    states = np.concatenate([t.states for t in batch.trajectories])
    actions = np.concatenate([t.actions for t in batch.trajectories])
    log_probs = np.concatenate([t.log_probs for t in batch.trajectories])
    return states, actions, log_probs


def mean_batch_return(batch: RolloutBatch, gamma: float) -> float:
    """Average per-episode discounted return of the collected batch."""
    vals = [discounted_return(t.rewards, gamma) for t in batch.trajectories]
    return float(np.mean(vals))


def actor_surrogate_terms(
    policy: GaussianPolicy,
    states: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    old_log_probs: np.ndarray,
    clip_epsilon: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Loss and analytic gradients of the clipped surrogate on one minibatch.

    Returns (loss, grad_mean_params, grad_log_std, ratios, unclipped_mask).
    Gradient flows only through steps on the unclipped branch; ties at
    ratio == 1 count as unclipped so a fresh update can move.
    """
    m = len(states)
    mean, acts = _forward_cached(policy.spec, policy.params, states)
    inv_std = np.exp(-policy.log_std)
    z = (actions - mean) * inv_std
    log_probs = (
        -0.5 * np.sum(z * z, axis=1)
        - np.sum(policy.log_std)
        - 0.5 * actions.shape[1] * np.log(2.0 * np.pi)
    )
    ratio = np.exp(log_probs - old_log_probs)
    surr_raw = ratio * advantages
    surr_clip = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    loss = -float(np.mean(np.minimum(surr_raw, surr_clip)))
    unclipped = surr_raw <= surr_clip
    w = np.where(unclipped, ratio * advantages, 0.0) * (-1.0 / m)
    grad_mean = _backward_cached(policy.spec, policy.params, acts, w[:, None] * z * inv_std)
    grad_log_std = (w[:, None] * (z * z - 1.0)).sum(axis=0)
    return loss, grad_mean, grad_log_std, ratio, unclipped


def clip_gradient(grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Scale grad down so its L2 norm is at most max_norm."""
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def ppo_update(
    model: ActorCritic, batch: RolloutBatch, config: PpoConfig, rng: np.random.Generator
) -> dict:
    """Clipped-surrogate update of the actor and squared-error fit of the critic.

    Advantages are normalized once per update. On a non-finite loss the whole
    update is abandoned and the model keeps its pre-update parameters. With
    target_kl set, the update halts early once the sampled policy divergence
    passes 1.5 times the target, leaving the offending minibatch unapplied;
    this is what keeps a run of aligned minibatch steps from shoving the
    action mean out of its reward corridor in one iteration.
    """
    states, actions, old_log_probs = _flatten(batch)
    n = len(states)
    if n == 0:
        raise UsageError("empty rollout batch")
    advantages, value_targets = compute_advantages(batch, config.gamma, config.gae_lambda)
    adv_std = float(advantages.std())
    norm_adv = (advantages - advantages.mean()) / (adv_std if adv_std > 1e-12 else 1.0)

    snapshot = model.copy()
    sums = {"actor_loss": 0.0, "critic_loss": 0.0, "clip_fraction": 0.0, "ratio": 0.0, "kl": 0.0}
    n_minibatches = 0
    kl_stopped = False

    for _ in range(config.epochs_per_update):
        perm = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            mb = perm[lo : lo + config.minibatch_size]
            S, A, adv = states[mb], actions[mb], norm_adv[mb]
            m = len(mb)

            actor_loss, grad_mean, grad_log_std, ratio, unclipped = actor_surrogate_terms(
                model.policy, S, A, adv, old_log_probs[mb], config.clip_epsilon
            )
            v_out, v_acts = _forward_cached(model.critic_spec, model.critic_params, S)
            v_err = v_out[:, 0] - value_targets[mb]
            critic_loss = config.value_loss_coeff * float(np.mean(v_err * v_err))

            if not (np.isfinite(actor_loss) and np.isfinite(critic_loss)):
                model.policy = snapshot.policy
                model.critic_params = snapshot.critic_params
                model.opt_mean = snapshot.opt_mean
                model.opt_log_std = snapshot.opt_log_std
                model.opt_critic = snapshot.opt_critic
                return {
                    "aborted": True,
                    "actor_loss": float("nan"),
                    "critic_loss": float("nan"),
                    "clip_fraction": float("nan"),
                    "mean_ratio": float("nan"),
                    "approx_kl": float("nan"),
                    "mean_return": mean_batch_return(batch, config.gamma),
                    "minibatches": n_minibatches,
                    "kl_stopped": False,
                }

            # nonnegative divergence estimate from the already-computed ratios
            approx_kl = float(np.mean((ratio - 1.0) - np.log(ratio)))
            if config.target_kl is not None and approx_kl > 1.5 * config.target_kl:
                kl_stopped = True
                break

            grad_critic = _backward_cached(
                model.critic_spec,
                model.critic_params,
                v_acts,
                (config.value_loss_coeff * 2.0 / m) * v_err[:, None],
            )
            if config.max_grad_norm is not None:
                grad_mean = clip_gradient(grad_mean, config.max_grad_norm)
                grad_log_std = clip_gradient(grad_log_std, config.max_grad_norm)
                grad_critic = clip_gradient(grad_critic, config.max_grad_norm)

            new_mean, model.opt_mean = adam_step(model.opt_mean, model.policy.params, grad_mean)
            new_log_std, model.opt_log_std = adam_step(
                model.opt_log_std, model.policy.log_std, grad_log_std
            )
            model.critic_params, model.opt_critic = adam_step(
                model.opt_critic, model.critic_params, grad_critic
            )
            model.policy = GaussianPolicy(
                model.policy.spec, new_mean, clamp_log_std(new_log_std)
            )

            sums["actor_loss"] += actor_loss
            sums["critic_loss"] += critic_loss
            sums["clip_fraction"] += float(np.mean(~unclipped))
            sums["ratio"] += float(np.mean(ratio))
            sums["kl"] += approx_kl
            n_minibatches += 1
        if kl_stopped:
            break

    # the first minibatch has ratio exactly 1, so at least one always applies
    return {
        "aborted": False,
        "actor_loss": sums["actor_loss"] / n_minibatches,
        "critic_loss": sums["critic_loss"] / n_minibatches,
        "clip_fraction": sums["clip_fraction"] / n_minibatches,
        "mean_ratio": sums["ratio"] / n_minibatches,
        "approx_kl": sums["kl"] / n_minibatches,
        "mean_return": mean_batch_return(batch, config.gamma),
        "minibatches": n_minibatches,
        "kl_stopped": kl_stopped,
    }
