"""Variable-structure learning automaton with a linear reward/penalty scheme.

The automaton keeps a probability vector over ``r`` actions. A favorable
response to action ``i`` applies the reward update::

    p_i <- p_i + a * (1 - p_i)
    p_j <- p_j - a * p_j            (j != i)

and an unfavorable response applies the penalty update::

    p_i <- (1 - b) * p_i
    p_j <- b / (r - 1) + (1 - b) * p_j   (j != i)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class LearningParams:
    lambda_reward: float = 0.8
    lambda_penalty: float = 0.05
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.lambda_reward <= 1.0:
            raise ValueError(f"lambda_reward must be in (0, 1], got {self.lambda_reward}")
        if not 0.0 <= self.lambda_penalty < 1.0:
            raise ValueError(f"lambda_penalty must be in [0, 1), got {self.lambda_penalty}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")


@dataclass(frozen=True)
class ConvergencePolicy:
    prob_threshold: float = 0.95
    stall_window: int = 20
    stall_epsilon: float = 1e-6
    max_iterations: int = 500

    def __post_init__(self):
        if not 0.5 < self.prob_threshold <= 1.0:
            raise ValueError(f"prob_threshold must be in (0.5, 1], got {self.prob_threshold}")
        if self.stall_window < 1:
            raise ValueError("stall_window must be positive")
        if self.stall_epsilon < 0:
            raise ValueError("stall_epsilon must be non-negative")
        if self.max_iterations < self.stall_window:
            raise ValueError("max_iterations must be >= stall_window")


class ConvergenceState(enum.Enum):
    RUNNING = "running"
    PROBABILITY = "converged_by_probability"
    STALL = "converged_by_stall"
    LIMIT = "stopped_at_limit"


@dataclass(frozen=True)
class ConvergenceStatus:
    state: ConvergenceState
    action: Optional[int] = None

    @property
    def done(self) -> bool:
        return self.state is not ConvergenceState.RUNNING


@dataclass
class Automaton:
    """Probability vector over candidate actions plus an update counter."""

    probs: np.ndarray
    iterations: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 1 or self.probs.size < 1:
            raise ValueError("an automaton needs at least one action")

    @property
    def r(self) -> int:
        return int(self.probs.size)

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.r:
            raise IndexError(f"action {i} out of range for {self.r} actions")

    def select(self, rng: np.random.Generator) -> int:
        """Draw an action index with probability ``probs[i]``."""
        cdf = np.cumsum(self.probs)
        u = rng.random() * cdf[-1]
        i = int(np.searchsorted(cdf, u, side="right"))
        return min(i, self.r - 1)

    def reward(self, i: int, rate: float) -> "Automaton":
        self._check_index(i)
        p = self.probs * (1.0 - rate)
        p[i] = self.probs[i] + rate * (1.0 - self.probs[i])
        self.probs = np.clip(p, 0.0, 1.0)
        self.iterations += 1
        return self

    def penalize(self, i: int, rate: float) -> "Automaton":
        self._check_index(i)
        if self.r == 1:
            # nothing to shift probability mass onto
            return self
        p = rate / (self.r - 1) + (1.0 - rate) * self.probs
        p[i] = (1.0 - rate) * self.probs[i]
        self.probs = np.clip(p, 0.0, 1.0)
        self.iterations += 1
        return self

    def best_action(self) -> int:
        # np.argmax returns the first maximum, i.e. lowest index on ties
        return int(np.argmax(self.probs))


def new_automaton(r: int) -> Automaton:
    if r < 1:
        raise ValueError(f"number of actions must be >= 1, got {r}")
    return Automaton(np.full(r, 1.0 / r))


def select_action(aut: Automaton, rng: np.random.Generator) -> int:
    return aut.select(rng)


def reward(aut: Automaton, i: int, lambda_reward: float) -> Automaton:
    return aut.reward(i, lambda_reward)


def penalize(aut: Automaton, i: int, lambda_penalty: float) -> Automaton:
    return aut.penalize(i, lambda_penalty)


def check_convergence(
    aut: Automaton,
    rho_history: Sequence[float],
    policy: ConvergencePolicy = ConvergencePolicy(),
) -> ConvergenceStatus:
    best = aut.best_action()
    if aut.probs[best] >= policy.prob_threshold:
        return ConvergenceStatus(ConvergenceState.PROBABILITY, best)
    if len(rho_history) >= policy.stall_window:
        recent = rho_history[-policy.stall_window:]
        if max(recent) - min(recent) < policy.stall_epsilon:
            return ConvergenceStatus(ConvergenceState.STALL, best)
    if aut.iterations >= policy.max_iterations:
        return ConvergenceStatus(ConvergenceState.LIMIT, best)
    return ConvergenceStatus(ConvergenceState.RUNNING)
