"""Scripted policies and small builders shared across test modules."""

import numpy as np


class ConstantPolicy:
    """Emits one fixed action at every step."""

    def __init__(self, action):
        self.action = np.asarray(action, dtype=np.float64)

    def mean_action(self, state):
        return self.action.copy()

    def mean_action_batch(self, states):
        return np.tile(self.action, (len(states), 1))

    def sample_batch(self, states, rng):
        acts = self.mean_action_batch(states)
        return acts, np.zeros(len(states))

    def sample(self, state, rng):
        return self.action.copy(), 0.0

    def for_episode(self, start_state):
        return self


class BeelinePolicy:
    """Heads straight for the goal at a capped speed, optionally with noise."""

    def __init__(self, goal, speed=0.05, noise=0.0):
        self.goal = np.asarray(goal, dtype=np.float64)
        self.speed = speed
        self.noise = noise

    def mean_action_batch(self, states):
        delta = self.goal[None, :] - np.asarray(states, dtype=np.float64)
        dist = np.linalg.norm(delta, axis=1, keepdims=True)
        steps = np.where(dist > 1e-12, delta / np.maximum(dist, 1e-12), 0.0)
        return steps * np.minimum(dist, self.speed)

    def mean_action(self, state):
        return self.mean_action_batch(np.asarray(state)[None, :])[0]

    def sample_batch(self, states, rng):
        acts = self.mean_action_batch(states)
        if self.noise > 0.0:
            acts = acts + rng.normal(0.0, self.noise, size=acts.shape)
        return acts, np.zeros(len(states))

    def sample(self, state, rng):
        a, lp = self.sample_batch(np.asarray(state)[None, :], rng)
        return a[0], float(lp[0])

    def for_episode(self, start_state):
        return self
