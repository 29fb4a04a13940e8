"""Enumeration oracle: completeness, exact moments, gradient identity, MC rates."""

import numpy as np
import pytest

from kstepkd import oracle
from kstepkd.models import ModelArch, init_model, zero_model
from kstepkd.oracle import EnumerationSpec, SizeBoundError
from kstepkd.returns import ReturnConfig
from kstepkd.seqmdp import Vocabulary, initial_state, step
from kstepkd.teacher import FrozenModelTeacher, TabularTeacher

VOCAB2 = Vocabulary(size=2, eos_id=1, bos_id=0)
VOCAB3 = Vocabulary(size=3, eos_id=2, bos_id=0)


def bias_only_policy(vocab_size, logits, window=1):
    model = zero_model(ModelArch("linear", window=window), vocab_size)
    params = model.params.copy()
    params[-vocab_size:] = logits
    return model.with_params(params)


def uniform_policy(vocab_size, window=1):
    return zero_model(ModelArch("linear", window=window), vocab_size)


class TestEnumeration:
    def test_vocab2_horizon1(self):
        spec = EnumerationSpec(VOCAB2, 1, initial_state(VOCAB2))
        trajs = oracle.enumerate_trajectories(spec, uniform_policy(2))
        assert len(trajs) == 2
        assert abs(sum(p for _, p in trajs) - 1.0) < 1e-10

    def test_vocab2_horizon2_three_trajectories(self):
        spec = EnumerationSpec(VOCAB2, 2, initial_state(VOCAB2))
        trajs = oracle.enumerate_trajectories(spec, uniform_policy(2))
        actions = sorted(t.actions for t, _ in trajs)
        assert actions == [(0, 0), (0, 1), (1,)]
        assert abs(sum(p for _, p in trajs) - 1.0) < 1e-10

    def test_uniform_vocab3_horizon2_probabilities(self):
        spec = EnumerationSpec(VOCAB3, 2, initial_state(VOCAB3))
        trajs = oracle.enumerate_trajectories(spec, uniform_policy(3))
        for traj, p in trajs:
            if traj.num_steps == 2:
                assert abs(p - 1.0 / 9.0) < 1e-12
        assert abs(sum(p for _, p in trajs) - 1.0) < 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_probability_completeness_random_policies(self, seed):
        rng = np.random.default_rng(seed)
        policy = init_model(ModelArch("mlp1", window=2, hidden=4), VOCAB3.size, rng, scale=1.0)
        spec = EnumerationSpec(VOCAB3, 4, initial_state(VOCAB3))
        trajs = oracle.enumerate_trajectories(spec, policy)
        assert abs(sum(p for _, p in trajs) - 1.0) < 1e-10

    def test_size_bounds_enforced(self):
        with pytest.raises(SizeBoundError):
            EnumerationSpec(Vocabulary(6, eos_id=5, bos_id=0), 3, initial_state(VOCAB3))
        with pytest.raises(SizeBoundError):
            EnumerationSpec(VOCAB3, 9, initial_state(VOCAB3))


def hand_instance():
    """Two-token MDP where EOS is always the teacher-optimal action.

    Teacher row at every context: q = [0.5, 1.0].  Constant policy
    pi = (0.7, 0.3).  At horizon 3 the four trajectories and their K=2
    returns give E[G_0] = 0.2335, E[Ghat_0] = 0.4785, bias_0 = 0.245.
    """
    teacher = TabularTeacher({(0,): np.array([0.5, 1.0])}, window=1, vocab_size=2)
    policy = bias_only_policy(2, np.log([7.0, 3.0]))
    spec = EnumerationSpec(VOCAB2, 3, initial_state(VOCAB2))
    return spec, policy, teacher


class TestExactMoments:
    def test_k1_bias_exactly_zero(self):
        spec, policy, teacher = hand_instance()
        moments = oracle.exact_moments(spec, policy, teacher, ReturnConfig(k=1))
        assert np.array_equal(moments.bias, np.zeros_like(moments.bias))

    def test_hand_computed_bias(self):
        spec, policy, teacher = hand_instance()
        moments = oracle.exact_moments(spec, policy, teacher, ReturnConfig(k=2))
        assert abs(moments.expected_g[0] - 0.2335) < 1e-9
        assert abs(moments.expected_g_hat[0] - 0.4785) < 1e-9
        assert abs(moments.bias[0] - 0.245) < 1e-9
        # at t=1 every surviving trajectory is in the one-step tail: no bias
        assert abs(moments.bias[1]) < 1e-12

    def test_step_conditioning_probabilities(self):
        spec, policy, teacher = hand_instance()
        moments = oracle.exact_moments(spec, policy, teacher, ReturnConfig(k=2))
        assert abs(moments.step_prob[0] - 1.0) < 1e-12
        assert abs(moments.step_prob[1] - 0.7) < 1e-12
        assert abs(moments.step_prob[2] - 0.49) < 1e-12

    def test_near_greedy_policy_bias_vanishes(self):
        rng = np.random.default_rng(6)
        q_model = init_model(ModelArch("linear", window=2), VOCAB3.size, rng, scale=1.0)
        teacher = FrozenModelTeacher(q_model)
        spec = EnumerationSpec(VOCAB3, 4, initial_state(VOCAB3))
        # align the policy argmax with the teacher's and scale the logits so
        # every reachable margin is >= 30: non-greedy mass < 1e-13
        margins = []
        seen = set()
        stack = [initial_state(VOCAB3)]
        while stack:
            s = stack.pop()
            if s.prefix in seen or s.is_terminal or s.length >= 4:
                continue
            seen.add(s.prefix)
            q = np.sort(q_model.logits(s))
            margins.append(q[-1] - q[-2])
            for a in range(VOCAB3.size):
                stack.append(step(s, a))
        scale = 35.0 / min(margins)
        policy = q_model.with_params(q_model.params * scale)
        for k in (2, 3):
            moments = oracle.exact_moments(spec, policy, teacher, ReturnConfig(k=k))
            assert np.all(np.abs(moments.bias) <= 1e-9)

    def test_variances_non_negative(self):
        spec, policy, teacher = hand_instance()
        moments = oracle.exact_moments(spec, policy, teacher, ReturnConfig(k=2))
        assert np.all(moments.var_g >= 0) and np.all(moments.var_g_hat >= 0)


class TestCheckGradient:
    def test_policy_gradient_identity(self):
        rng = np.random.default_rng(14)
        policy = init_model(ModelArch("linear", window=2), VOCAB3.size, rng, scale=0.6)
        teacher = FrozenModelTeacher(
            init_model(ModelArch("linear", window=2), VOCAB3.size, rng, scale=1.0)
        )
        spec = EnumerationSpec(VOCAB3, 3, initial_state(VOCAB3))
        report = oracle.check_gradient(policy, spec, teacher, ReturnConfig(k=1))
        assert report.passed, f"max rel error {report.max_rel_error:.2e}"
        assert np.all(np.isfinite(report.rel_errors))

    def test_symmetric_teacher_zero_gradient(self):
        # all Q-values equal: every return is the same constant, so the
        # score-function average cancels exactly
        teacher = TabularTeacher(
            {(0,): np.array([0.7, 0.7, 0.7]), (1,): np.array([0.7, 0.7, 0.7])},
            window=1,
            vocab_size=3,
        )
        policy = uniform_policy(3, window=1)
        spec = EnumerationSpec(VOCAB3, 3, initial_state(VOCAB3))
        grad = oracle._exact_policy_gradient(spec, policy, teacher)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)


class TestMonteCarloConvergence:
    def _instance(self):
        rng = np.random.default_rng(20)
        policy = init_model(ModelArch("linear", window=2), VOCAB3.size, rng, scale=0.4)
        teacher = FrozenModelTeacher(
            init_model(ModelArch("linear", window=2), VOCAB3.size, rng, scale=1.0)
        )
        spec = EnumerationSpec(VOCAB3, 3, initial_state(VOCAB3))
        return spec, policy, teacher

    def test_z_scores_within_threshold(self):
        spec, policy, teacher = self._instance()
        report = oracle.montecarlo_convergence(
            policy, spec, teacher, ReturnConfig(k=2), 10_000, np.random.default_rng(0)
        )
        assert not report.any_flagged, str(report)

    def test_single_sample_produces_report(self):
        spec, policy, teacher = self._instance()
        report = oracle.montecarlo_convergence(
            policy, spec, teacher, ReturnConfig(k=2), 1, np.random.default_rng(0)
        )
        assert report.n_samples == 1
        assert all(e.z_score is None for e in report.entries)
        assert not report.any_flagged

    def test_fixed_seed_reproducible(self):
        spec, policy, teacher = self._instance()
        r1 = oracle.montecarlo_convergence(
            policy, spec, teacher, ReturnConfig(k=2), 500, np.random.default_rng(7)
        )
        r2 = oracle.montecarlo_convergence(
            policy, spec, teacher, ReturnConfig(k=2), 500, np.random.default_rng(7)
        )
        assert [(e.metric, e.sample_mean, e.z_score) for e in r1.entries] == [
            (e.metric, e.sample_mean, e.z_score) for e in r2.entries
        ]

    def test_report_csv(self, tmp_path):
        spec, policy, teacher = self._instance()
        report = oracle.montecarlo_convergence(
            policy, spec, teacher, ReturnConfig(k=2), 200, np.random.default_rng(3)
        )
        path = tmp_path / "report.csv"
        oracle.write_report_csv(path, report.csv_rows())
        first = path.read_text().splitlines()[0]
        assert first == "metric,value,threshold,status"

    def test_root_n_convergence_rate(self):
        # Drawing n trajectories iid equals a multinomial draw over the
        # enumerated trajectory set, so the sample mean of Ghat_0 can be
        # simulated per repetition in O(#trajectories).  Many independent
        # repetitions keep the fitted slope's own noise well below the
        # +-0.1 acceptance band.
        import kstepkd.returns as ret

        spec, policy, teacher = self._instance()
        trajs = oracle.enumerate_trajectories(spec, policy)
        probs = np.array([p for _, p in trajs])
        values = np.array(
            [float(ret.estimate(t, teacher, ReturnConfig(k=2)).g_hat_clipped[0]) for t, _ in trajs]
        )
        exact = float(np.dot(probs, values))
        rng = np.random.default_rng(2024)
        sizes = (1_000, 10_000, 100_000)
        reps = 200
        rms_errors = []
        for n in sizes:
            counts = rng.multinomial(n, probs, size=reps)
            means = counts @ values / n
            rms_errors.append(float(np.sqrt(np.mean((means - exact) ** 2))))
        slope = np.polyfit(np.log10(sizes), np.log10(rms_errors), 1)[0]
        assert -0.6 <= slope <= -0.4, f"slope {slope:.3f}, errors {rms_errors}"
