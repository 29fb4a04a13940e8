"""Transition and rollout semantics of the sequence MDP."""

import numpy as np
import pytest

from kstepkd.models import ModelArch, init_model, zero_model
from kstepkd.seqmdp import (
    State,
    TerminalStateError,
    Vocabulary,
    initial_state,
    rollout,
    step,
)

VOCAB = Vocabulary(size=4, eos_id=3, bos_id=0)


class ConstantPolicy:
    """Fixed logits at every state."""

    def __init__(self, logits):
        arch = ModelArch("linear", window=1)
        model = zero_model(arch, len(logits))
        params = model.params.copy()
        params[-len(logits):] = logits  # bias entries
        self.model = model.with_params(params)

    def distribution(self, state):
        return self.model.distribution(state)


class TestVocabulary:
    def test_validation(self):
        with pytest.raises(ValueError):
            Vocabulary(size=1, eos_id=0, bos_id=0)
        with pytest.raises(ValueError):
            Vocabulary(size=3, eos_id=1, bos_id=1)
        with pytest.raises(ValueError):
            Vocabulary(size=3, eos_id=5, bos_id=0)


class TestStep:
    def test_appends_token(self):
        s = initial_state(VOCAB)
        s2 = step(s, 3 - 2)  # any non-eos token
        assert s2.prefix == (VOCAB.bos_id, 1)
        assert s2.length == 1

    def test_eos_terminates(self):
        s = step(step(initial_state(VOCAB), 1), VOCAB.eos_id)
        assert s.prefix == (0, 1, 3)
        assert s.is_terminal

    def test_step_from_terminal_errors(self):
        s = step(initial_state(VOCAB), VOCAB.eos_id)
        with pytest.raises(TerminalStateError):
            step(s, 1)

    def test_out_of_range_action(self):
        with pytest.raises(ValueError):
            step(initial_state(VOCAB), 99)


class TestRollout:
    def test_greedy_eos_first_gives_length_one(self):
        policy = ConstantPolicy(np.array([0.0, 0.0, 0.0, 5.0]))
        traj = rollout(policy, initial_state(VOCAB), horizon=8, mode="greedy")
        assert traj.num_steps == 1
        assert traj.actions == (VOCAB.eos_id,)
        assert traj.terminal_state.is_terminal

    def test_greedy_truncates_at_horizon(self):
        # vocab 3, constant logits [1.0, 2.0, 0.5]: argmax is token 1 twice
        vocab = Vocabulary(size=3, eos_id=2, bos_id=0)
        policy = ConstantPolicy(np.array([1.0, 2.0, 0.5]))
        traj = rollout(policy, initial_state(vocab), horizon=2, mode="greedy")
        assert traj.actions == (1, 1)
        assert not traj.terminal_state.is_terminal

    def test_greedy_tie_breaks_to_lowest_index(self):
        policy = ConstantPolicy(np.zeros(4))
        traj = rollout(policy, initial_state(VOCAB), horizon=1, mode="greedy")
        assert traj.actions == (0,)

    def test_sample_reproducible_under_seed(self):
        model = init_model(ModelArch("linear", window=2), VOCAB.size, np.random.default_rng(5))
        t1 = rollout(model, initial_state(VOCAB), 10, mode="sample", rng=np.random.default_rng(42))
        t2 = rollout(model, initial_state(VOCAB), 10, mode="sample", rng=np.random.default_rng(42))
        assert t1.actions == t2.actions
        assert np.array_equal(t1.logprobs, t2.logprobs)

    def test_sample_requires_rng(self):
        with pytest.raises(ValueError):
            rollout(ConstantPolicy(np.zeros(4)), initial_state(VOCAB), 4, mode="sample")

    def test_rollout_from_terminal_errors(self):
        s = step(initial_state(VOCAB), VOCAB.eos_id)
        with pytest.raises(TerminalStateError):
            rollout(ConstantPolicy(np.zeros(4)), s, 4, mode="greedy")


class TestTrajectoryInvariants:
    @pytest.mark.parametrize("seed", range(20))
    def test_replay_determinism_and_horizon_bound(self, seed):
        rng = np.random.default_rng(seed)
        model = init_model(ModelArch("mlp1", window=2, hidden=4), VOCAB.size, rng)
        horizon = int(rng.integers(1, 9))
        traj = rollout(model, initial_state(VOCAB), horizon, mode="sample", rng=rng)

        assert traj.num_steps <= horizon
        if traj.num_steps < horizon:
            assert traj.actions[-1] == VOCAB.eos_id
        assert np.all(traj.logprobs <= 0.0)
        assert np.all(np.isfinite(traj.logprobs))

        # replaying the actions from the initial state reproduces every state
        state = traj.steps[0].state
        for ts in traj.steps:
            assert ts.state.prefix == state.prefix
            state = step(state, ts.action)
        assert state.prefix == traj.terminal_state.prefix

    def test_greedy_idempotence(self):
        model = init_model(ModelArch("mlp1", window=3, hidden=4), VOCAB.size, np.random.default_rng(9))
        t1 = rollout(model, initial_state(VOCAB), 12, mode="greedy")
        t2 = rollout(model, initial_state(VOCAB), 12, mode="greedy")
        assert t1.actions == t2.actions

    def test_conditioning_tokens_excluded_from_length(self):
        s = initial_state(VOCAB, conditioning=(1, 2))
        assert s.prefix == (0, 1, 2)
        assert s.length == 0
        assert not s.is_terminal
