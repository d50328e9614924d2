import dataclasses

import numpy as np
import pytest

from pdtwin.dqn import (
    DivergenceDetected, NoLegalAction, NStepAccumulator, QPolicy, ReplayBuffer,
    TrainConfig, epsilon_greedy, td_target, train,
)
from pdtwin.envs.component import ComponentEnv
from pdtwin.mdp import Environment, StateEncoding, evaluate_policy
from pdtwin.oracle import TabularState, backward_induction


class BanditEnv(Environment):
    """One-step environment: action 1 pays 1, everything else pays 0."""

    action_count = 3
    action_names = ("a", "b", "c")
    element_dim = 1
    aux_dim = 1
    horizon = 1

    def reset(self, rng):
        return 0

    def step(self, state, action, rng):
        return 1, 1.0 if action == 1 else 0.0, True

    def action_mask(self, state):
        return np.ones(3, dtype=bool)

    def encode(self, state):
        return StateEncoding((), np.array([1.0]))


class TestTrainConfig:
    def test_epsilon_schedule_endpoints(self):
        cfg = TrainConfig(episodes=100)
        assert cfg.epsilon_at(0) == 1.0
        assert cfg.epsilon_at(50) == pytest.approx(0.05)
        assert cfg.epsilon_at(99) == pytest.approx(0.05)

    def test_epsilon_linear_midpoint(self):
        cfg = TrainConfig(episodes=100)
        assert cfg.epsilon_at(25) == pytest.approx(0.525)

    def test_explicit_decay_horizon(self):
        cfg = TrainConfig(episodes=100, epsilon_decay_episodes=10)
        assert cfg.epsilon_at(10) == pytest.approx(0.05)

    def test_rejects_bad_epsilons(self):
        with pytest.raises(ValueError):
            TrainConfig(epsilon_start=0.1, epsilon_end=0.5)


class TestReplayBuffer:
    def test_ring_overwrites_oldest(self):
        buf = ReplayBuffer(3)
        for i in range(5):
            buf.push(i)
        assert len(buf) == 3
        assert 0 not in buf and 1 not in buf
        assert all(i in buf for i in (2, 3, 4))

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            buf.push(i)
        batch = buf.sample(10, np.random.default_rng(0))
        assert sorted(batch) == list(range(10))

    def test_sample_caps_at_size(self):
        buf = ReplayBuffer(10)
        buf.push("x")
        assert buf.sample(5, np.random.default_rng(0)) == ["x"]


class TestEpsilonGreedy:
    def test_greedy_respects_mask(self):
        q = np.array([10.0, 1.0, 5.0])
        mask = np.array([False, True, True])
        rng = np.random.default_rng(0)
        assert epsilon_greedy(q, mask, 0.0, rng) == 2

    def test_tie_breaks_to_lowest_index(self):
        q = np.array([3.0, 3.0, 1.0])
        mask = np.ones(3, dtype=bool)
        assert epsilon_greedy(q, mask, 0.0, np.random.default_rng(0)) == 0

    def test_exploration_only_picks_legal(self):
        q = np.zeros(3)
        mask = np.array([False, True, False])
        rng = np.random.default_rng(0)
        assert all(epsilon_greedy(q, mask, 1.0, rng) == 1 for _ in range(20))

    def test_all_masked_raises(self):
        with pytest.raises(NoLegalAction):
            epsilon_greedy(np.zeros(2), np.zeros(2, dtype=bool),
                           0.5, np.random.default_rng(0))

    def test_exploration_rate(self):
        q = np.array([1.0, 0.0])
        mask = np.ones(2, dtype=bool)
        rng = np.random.default_rng(1)
        picks = [epsilon_greedy(q, mask, 0.5, rng) for _ in range(2000)]
        # greedy action 0 chosen with probability 1 - eps + eps/2 = 0.75
        assert np.mean(np.array(picks) == 0) == pytest.approx(0.75, abs=0.05)


class TestTdTarget:
    def test_terminal_is_reward(self):
        assert td_target(3.0, True, np.array([100.0]), np.array([True]), 1.0) == 3.0

    def test_bootstraps_best_legal(self):
        next_q = np.array([5.0, 9.0, 7.0])
        mask = np.array([True, False, True])
        assert td_target(1.0, False, next_q, mask, 0.5) == pytest.approx(4.5)


class TestNStepAccumulator:
    """Feed the reward stream 1,2,3,4,5 (episode of five steps, discount 0.5)
    and check every emitted replay item against hand-computed returns."""

    def run_episode(self, n_step, discount=0.5):
        acc = NStepAccumulator(n_step, discount)
        emitted = []
        for t in range(5):
            emitted += acc.push(f"s{t}", t % 3, float(t + 1),
                                f"s{t + 1}", None, done=(t == 4))
        return emitted

    def test_one_step_passthrough(self):
        items = self.run_episode(n_step=1)
        assert [(i.encoding, i.reward, i.bootstrap) for i in items] == [
            ("s0", 1.0, 0.5), ("s1", 2.0, 0.5), ("s2", 3.0, 0.5),
            ("s3", 4.0, 0.5), ("s4", 5.0, 0.0),
        ]

    def test_three_step_returns_and_bootstraps(self):
        items = self.run_episode(n_step=3)
        # windowed: 1 + .5*2 + .25*3, then 2 + .5*3 + .25*4; the final three
        # are exact suffix returns emitted at termination, newest first
        expected = [
            ("s0", 1 + 1.0 + 0.75, 0.125, "s3"),
            ("s1", 2 + 1.5 + 1.0, 0.125, "s4"),
            ("s4", 5.0, 0.0, "s5"),
            ("s3", 4 + 2.5, 0.0, "s5"),
            ("s2", 3 + 2.0 + 1.25, 0.0, "s5"),
        ]
        got = [(i.encoding, i.reward, i.bootstrap, i.next_encoding)
               for i in items]
        assert got == [(s, pytest.approx(r), b, nxt) for s, r, b, nxt in expected]

    def test_window_longer_than_episode_yields_suffix_returns(self):
        items = self.run_episode(n_step=10, discount=1.0)
        assert all(i.bootstrap == 0.0 for i in items)
        assert sorted(i.reward for i in items) == [5.0, 9.0, 12.0, 14.0, 15.0]

    def test_pending_clears_between_episodes(self):
        acc = NStepAccumulator(3, 1.0)
        acc.push("a", 0, 1.0, "b", None, done=True)
        items = acc.push("c", 0, 7.0, "d", None, done=True)
        assert len(items) == 1 and items[0].reward == 7.0


class TestTraining:
    def test_learns_the_bandit(self):
        cfg = TrainConfig(episodes=300, warmup=32, batch_size=16, seed=0)
        result = train(BanditEnv(), cfg)
        q = result.policy.q_values(0)
        assert int(np.argmax(q)) == 1
        assert q[1] == pytest.approx(1.0, abs=0.05)

    def test_deterministic_given_seed(self):
        cfg = TrainConfig(episodes=50, warmup=32, batch_size=16, seed=4)
        a = train(BanditEnv(), cfg)
        b = train(BanditEnv(), cfg)
        assert a.episode_returns == b.episode_returns
        for name, arr in a.policy.net.parameters().items():
            assert np.array_equal(arr, b.policy.net.parameters()[name])

    def test_seed_changes_training(self):
        a = train(BanditEnv(), TrainConfig(episodes=50, warmup=32, seed=0))
        b = train(BanditEnv(), TrainConfig(episodes=50, warmup=32, seed=1))
        assert a.episode_returns != b.episode_returns

    def test_curves_have_episode_length(self):
        cfg = TrainConfig(episodes=40, warmup=16, batch_size=8)
        result = train(BanditEnv(), cfg)
        assert len(result.episode_returns) == 40
        assert len(result.episode_epsilons) == 40
        assert len(result.loss_moving_average) == 40

    def test_double_dqn_also_learns(self):
        cfg = TrainConfig(episodes=300, warmup=32, batch_size=16, double_dqn=True)
        result = train(BanditEnv(), cfg)
        assert int(np.argmax(result.policy.q_values(0))) == 1

    def test_multistep_targets_also_learn(self):
        cfg = TrainConfig(episodes=300, warmup=32, batch_size=16, n_step=4)
        result = train(BanditEnv(), cfg)
        q = result.policy.q_values(0)
        assert int(np.argmax(q)) == 1
        assert q[1] == pytest.approx(1.0, abs=0.05)

    def test_snapshot_selection_records_scores(self):
        cfg = TrainConfig(
            episodes=100, warmup=16, batch_size=8,
            snapshot_every=20, snapshot_episodes=5,
        )
        result = train(BanditEnv(), cfg)
        assert [ep for ep, _ in result.snapshot_scores] == [20, 40, 60, 80, 100]
        assert all(np.isfinite(s) for _, s in result.snapshot_scores)
        assert int(np.argmax(result.policy.q_values(0))) == 1

    def test_snapshot_selection_is_deterministic(self):
        cfg = TrainConfig(
            episodes=60, warmup=16, batch_size=8,
            snapshot_every=25, snapshot_episodes=5, seed=3,
        )
        a = train(BanditEnv(), cfg)
        b = train(BanditEnv(), cfg)
        assert a.snapshot_scores == b.snapshot_scores
        for name, arr in a.policy.net.parameters().items():
            assert np.array_equal(arr, b.policy.net.parameters()[name])

    def test_divergence_detection(self):
        class NanEnv(BanditEnv):
            def step(self, state, action, rng):
                return 1, float("nan"), True

        cfg = TrainConfig(episodes=50, warmup=8, batch_size=8)
        with pytest.raises(DivergenceDetected):
            train(NanEnv(), cfg)


class TestQPolicy:
    def test_greedy_policy_is_deterministic(self):
        result = train(BanditEnv(), TrainConfig(episodes=100, warmup=16))
        policy = result.policy
        acts = {policy.act(0, np.ones(3, dtype=bool), np.random.default_rng(i))
                for i in range(10)}
        assert len(acts) == 1


@pytest.mark.slow
class TestCoinGameLearning:
    def test_short_training_beats_terminating(self):
        # small-budget smoke run: the learned policy must find positive value
        env = ComponentEnv(encoding="compressed")
        cfg = TrainConfig(episodes=600, seed=0, reward_scale=1e6)
        result = train(env, cfg)
        summary = evaluate_policy(env, result.policy, 500, base_seed=0)
        vstar = backward_induction().values[TabularState(0, 0, 10)]
        assert summary.mean > 0.5 * vstar
