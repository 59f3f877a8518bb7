"""Flat-parameter MLPs, a diagonal-Gaussian policy head, and Adam.

All numerics are float64 and functional in style: forward/backward/optimizer
steps take explicit parameter vectors and return new arrays, so model state
can be copied, swapped between learners, or checkpointed without aliasing
surprises. The backward pass is exact analytic backprop for the fixed
tanh-hidden / linear-output architecture, not autodiff.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import BinaryIO, Sequence

import numpy as np

from .errors import ConfigurationError, OptimizerError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))

CHECKPOINT_MAGIC = b"MLPNET01"


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected net: tanh hidden layers, linear output."""

    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (256, 256)
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        dims = (self.input_dim, self.output_dim, *self.hidden_dims)
        if not self.hidden_dims:
            raise ConfigurationError("at least one hidden layer is required")
        if any(int(d) != d or d < 1 for d in dims):
            raise ConfigurationError(f"layer dims must be positive integers, got {dims}")
        if self.hidden_activation != "tanh":
            raise ConfigurationError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation != "linear":
            raise ConfigurationError(f"unsupported output activation {self.output_activation!r}")
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))


@lru_cache(maxsize=None)
def _layout(spec: MlpSpec) -> tuple[tuple[slice, slice, int, int], ...]:
    """Per-layer (weight slice, bias slice, fan_in, fan_out) into the flat vector."""
    out = []
    dims = spec.layer_dims
    offset = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = slice(offset, offset + fan_in * fan_out)
        offset = w.stop
        b = slice(offset, offset + fan_out)
        offset = b.stop
        out.append((w, b, fan_in, fan_out))
    return tuple(out)


def _check_params(spec: MlpSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.param_count,):
        raise ConfigurationError(
            f"parameter vector has shape {params.shape}, spec needs ({spec.param_count},)"
        )
    return params


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    params = np.zeros(spec.param_count, dtype=np.float64)
    for w, _, fan_in, fan_out in _layout(spec):
        bound = 1.0 / np.sqrt(fan_in)
        params[w] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return params


def scale_output_layer(spec: MlpSpec, params: np.ndarray, factor: float) -> np.ndarray:
    """Return a copy with the last layer's weights multiplied by factor.

    Shrinking the action head keeps the initial policy mean near zero so the
    exploration noise, not the random head, decides early behaviour.
    """
    params = _check_params(spec, params).copy()
    w, _, _, _ = _layout(spec)[-1]
    params[w] *= factor
    return params


def _forward_cached(spec: MlpSpec, params: np.ndarray, inputs: np.ndarray):
    """Batched forward pass keeping hidden activations for backprop.

    Returns (outputs, activations) where activations[0] is the input batch and
    activations[i] the post-tanh output of hidden layer i.
    """
    layers = _layout(spec)
    acts = [inputs]
    h = inputs
    for w, b, fan_in, fan_out in layers[:-1]:
        h = np.tanh(h @ params[w].reshape(fan_in, fan_out) + params[b])
        acts.append(h)
    w, b, fan_in, fan_out = layers[-1]
    out = h @ params[w].reshape(fan_in, fan_out) + params[b]
    return out, acts


def _backward_cached(
    spec: MlpSpec, params: np.ndarray, acts: list[np.ndarray], out_grads: np.ndarray
) -> np.ndarray:
    """Gradient of sum_i dot(output_i, out_grads_i) w.r.t. the flat parameters."""
    layers = _layout(spec)
    grad = np.zeros_like(params)
    g = out_grads
    for i in range(len(layers) - 1, -1, -1):
        w, b, fan_in, fan_out = layers[i]
        a_prev = acts[i]
        grad[w] = (a_prev.T @ g).ravel()
        grad[b] = g.sum(axis=0)
        if i > 0:
            # tanh'(z) = 1 - tanh(z)^2, with tanh(z) already cached in acts[i]
            g = (g @ params[w].reshape(fan_in, fan_out).T) * (1.0 - acts[i] ** 2)
    return grad


def _as_batch(spec: MlpSpec, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape != (spec.input_dim,):
            raise ConfigurationError(f"input has shape {x.shape}, spec needs ({spec.input_dim},)")
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == spec.input_dim:
        return x, False
    raise ConfigurationError(f"input has shape {x.shape}, spec needs (*, {spec.input_dim})")


def mlp_forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the net on a single input vector or a (batch, input_dim) matrix."""
    params = _check_params(spec, params)
    xb, single = _as_batch(spec, x)
    out, _ = _forward_cached(spec, params, xb)
    return out[0] if single else out


def mlp_backward(
    spec: MlpSpec, params: np.ndarray, x: np.ndarray, output_gradient: np.ndarray
) -> np.ndarray:
    """Gradient of dot(output, output_gradient) w.r.t. the flat parameter vector.

    Accepts a single input vector with a matching output gradient, or batches
    of both, in which case per-sample gradients are summed.
    """
    params = _check_params(spec, params)
    xb, single = _as_batch(spec, x)
    g = np.asarray(output_gradient, dtype=np.float64)
    g = g[None, :] if single else g
    if g.shape != (xb.shape[0], spec.output_dim):
        raise ConfigurationError(
            f"output gradient has shape {output_gradient.shape}, "
            f"spec needs (*, {spec.output_dim})"
        )
    _, acts = _forward_cached(spec, params, xb)
    return _backward_cached(spec, params, acts, g)


# ---------------------------------------------------------------------------
# Diagonal Gaussian policy


@dataclass
class GaussianPolicy:
    """Squash-free Gaussian policy: state-dependent mean, global log stddev."""

    spec: MlpSpec
    params: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.params = _check_params(self.spec, self.params)
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.log_std.shape != (self.spec.output_dim,):
            raise ConfigurationError(
                f"log_std has shape {self.log_std.shape}, "
                f"policy needs ({self.spec.output_dim},)"
            )

    @property
    def action_dim(self) -> int:
        return self.spec.output_dim

    def mean_action(self, state: np.ndarray) -> np.ndarray:
        return mlp_forward(self.spec, self.params, state)

    def mean_action_batch(self, states: np.ndarray) -> np.ndarray:
        return mlp_forward(self.spec, self.params, states)

    def sample(self, state: np.ndarray, rng: np.random.Generator):
        return policy_sample(self, state, rng)

    def sample_batch(self, states: np.ndarray, rng: np.random.Generator):
        return policy_sample_batch(self, states, rng)

    def logprob_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return policy_logprob_batch(self, states, actions)

    def for_episode(self, start_state: np.ndarray) -> "GaussianPolicy":
        """Hook for per-episode member selection; a plain policy is its own choice."""
        return self

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.spec, self.params.copy(), self.log_std.copy())


def clamp_log_std(log_std: np.ndarray) -> np.ndarray:
    return np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)


def _gaussian_logprob(mean: np.ndarray, log_std: np.ndarray, actions: np.ndarray) -> np.ndarray:
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * _LOG_2PI


def policy_sample(policy: GaussianPolicy, state: np.ndarray, rng: np.random.Generator):
    """Draw one action and its log density. Returns (action, log_prob)."""
    mean = policy.mean_action(state)
    noise = rng.standard_normal(policy.action_dim)
    action = mean + np.exp(policy.log_std) * noise
    return action, float(_gaussian_logprob(mean, policy.log_std, action))


def policy_sample_batch(policy: GaussianPolicy, states: np.ndarray, rng: np.random.Generator):
    means = policy.mean_action_batch(states)
    noise = rng.standard_normal(means.shape)
    actions = means + np.exp(policy.log_std) * noise
    return actions, _gaussian_logprob(means, policy.log_std, actions)


def policy_logprob(policy: GaussianPolicy, state: np.ndarray, action: np.ndarray) -> float:
    mean = policy.mean_action(state)
    return float(_gaussian_logprob(mean, policy.log_std, np.asarray(action, dtype=np.float64)))


def policy_logprob_batch(
    policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray
) -> np.ndarray:
    means = policy.mean_action_batch(states)
    return _gaussian_logprob(means, policy.log_std, np.asarray(actions, dtype=np.float64))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one flat parameter vector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, n: int, lr: float = 3e-4) -> "AdamState":
        return cls(np.zeros(n, dtype=np.float64), np.zeros(n, dtype=np.float64), lr=lr)

    def copy(self) -> "AdamState":
        return AdamState(
            self.first_moment.copy(),
            self.second_moment.copy(),
            self.step_count,
            self.lr,
            self.beta1,
            self.beta2,
            self.epsilon,
        )


def adam_step(
    state: AdamState, params: np.ndarray, grads: np.ndarray
) -> tuple[np.ndarray, AdamState]:
    """One Adam update. Pure: returns fresh (params, state)."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ConfigurationError(
            f"gradient shape {grads.shape} does not match parameters {params.shape}"
        )
    finite = np.isfinite(grads)
    if not finite.all():
        idx = int(np.flatnonzero(~finite)[0])
        raise OptimizerError(f"non-finite gradient at index {idx}: {grads[idx]}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.epsilon)
    return new_params, new_state


# ---------------------------------------------------------------------------
# Checkpoints


def write_network(fh: BinaryIO, spec: MlpSpec, params: np.ndarray) -> None:
    """Write one net as magic, layer dims, then raw float64 parameters."""
    params = _check_params(spec, params)
    dims = spec.layer_dims
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<I", len(dims)))
    fh.write(struct.pack(f"<{len(dims)}I", *dims))
    fh.write(struct.pack("<Q", params.size))
    fh.write(np.ascontiguousarray(params, dtype="<f8").tobytes())


def read_network(fh: BinaryIO) -> tuple[MlpSpec, np.ndarray]:
    magic = fh.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"bad checkpoint magic {magic!r}")
    (n_dims,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{n_dims}I", fh.read(4 * n_dims))
    (count,) = struct.unpack("<Q", fh.read(8))
    spec = MlpSpec(input_dim=dims[0], output_dim=dims[-1], hidden_dims=tuple(dims[1:-1]))
    if count != spec.param_count:
        raise ConfigurationError(
            f"checkpoint carries {count} parameters, dims {dims} need {spec.param_count}"
        )
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ConfigurationError("truncated checkpoint")
    params = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return spec, params


def save_checkpoint(path, spec: MlpSpec, params: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_network(fh, spec, params)


def load_checkpoint(path) -> tuple[MlpSpec, np.ndarray]:
    with open(path, "rb") as fh:
        return read_network(fh)
