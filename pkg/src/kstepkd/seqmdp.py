"""Deterministic sequence-generation MDP.

States are token prefixes, actions are vocabulary tokens, and the transition
appends the chosen token to the prefix.  An episode ends when the end-of-sequence
token is emitted or when the rollout horizon is reached.  Conditioning inputs
(source tokens) are modeled by prepending them to the initial prefix; only
generated tokens count toward a state's ``length``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np


class TerminalStateError(ValueError):
    """Raised when an action is applied to (or queried at) a terminal state."""


@dataclass(frozen=True)
class Vocabulary:
    """Token inventory: ids 0..size-1 with designated BOS and EOS ids."""

    size: int
    eos_id: int
    bos_id: int

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.size}")
        if not (0 <= self.eos_id < self.size and 0 <= self.bos_id < self.size):
            raise ValueError("eos_id and bos_id must be valid token ids")
        if self.eos_id == self.bos_id:
            raise ValueError("eos_id and bos_id must differ")


@dataclass(frozen=True)
class State:
    """A token prefix.  ``length`` counts generated tokens only.

    EOS ends an episode immediately, so a generated EOS is always the last
    prefix token; terminality is therefore a check on the final token.
    """

    vocab: Vocabulary
    prefix: tuple[int, ...]
    length: int = 0

    @property
    def is_terminal(self) -> bool:
        return len(self.prefix) > 0 and self.prefix[-1] == self.vocab.eos_id

    def last_tokens(self, n: int) -> tuple[int, ...]:
        """Last ``n`` prefix tokens, left-padded with BOS."""
        if len(self.prefix) >= n:
            return self.prefix[-n:]
        return (self.vocab.bos_id,) * (n - len(self.prefix)) + self.prefix


def initial_state(vocab: Vocabulary, conditioning: tuple[int, ...] = ()) -> State:
    """Fresh episode start: BOS followed by optional conditioning tokens."""
    return State(vocab, (vocab.bos_id,) + tuple(conditioning), length=0)


def step(state: State, action: int) -> State:
    if state.is_terminal:
        raise TerminalStateError(f"cannot step from terminal state {state.prefix}")
    if not (0 <= action < state.vocab.size):
        raise ValueError(f"action {action} out of range for vocab size {state.vocab.size}")
    return State(state.vocab, state.prefix + (action,), state.length + 1)


@dataclass(frozen=True)
class TrajectoryStep:
    state: State
    action: int
    logprob: float


@dataclass(frozen=True)
class Trajectory:
    """An episode: the per-step (state, action, logprob) records plus the
    state reached after the final action."""

    steps: tuple[TrajectoryStep, ...]
    terminal_state: State

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(s.action for s in self.steps)

    @property
    def logprobs(self) -> np.ndarray:
        return np.array([s.logprob for s in self.steps], dtype=np.float64)

    def state_after(self, t: int) -> State:
        """State reached after action t (the state at which action t+1 is taken)."""
        if t + 1 < len(self.steps):
            return self.steps[t + 1].state
        return self.terminal_state


class Policy(Protocol):
    """Anything that maps a non-terminal state to an action distribution."""

    def distribution(self, state: State):  # -> models.PolicyDistribution
        ...


def _sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    # inverse-CDF draw; clamp guards the final partial-sum rounding below 1.0
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(idx, len(probs) - 1)


def rollout(
    policy: Policy,
    initial: State,
    horizon: int,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Roll one episode from ``initial`` for at most ``horizon`` actions.

    ``greedy`` picks the argmax logit (ties to the lowest token id); ``sample``
    draws from the policy's softmax using ``rng``.  The log-probability of the
    chosen action under the policy is recorded either way.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if initial.is_terminal:
        raise TerminalStateError("rollout must start from a non-terminal state")
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode requires an rng")

    steps: list[TrajectoryStep] = []
    state = initial
    for _ in range(horizon):
        dist = policy.distribution(state)
        if mode == "greedy":
            action = int(np.argmax(dist.logits))
        else:
            action = _sample_index(dist.probs, rng)
        logprob = float(dist.log_probs[action])
        if not np.isfinite(logprob):
            raise ValueError(f"non-finite log-probability for action {action}")
        steps.append(TrajectoryStep(state, action, logprob))
        state = step(state, action)
        if state.is_terminal:
            break
    return Trajectory(tuple(steps), state)
