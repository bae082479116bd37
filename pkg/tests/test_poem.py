import math

import numpy as np
import pytest

from sarem.dataset import LearnConfig, empirical_value, min_reward
from sarem.poem import e_step, m_step, node_posteriors, poem_train

from conftest import brute_force_posteriors, make_episode, random_params


def random_toy_dataset(seed, n_agents=2, n_episodes=6, n_actions=3, n_obs=4, max_decisions=5):
    """Small synthetic batch with mixed-sign rewards and ragged tracks."""
    gen = np.random.default_rng(seed)
    episodes = []
    for k in range(n_episodes):
        decisions = {}
        horizon = 1
        for n in range(n_agents):
            count = int(gen.integers(1, max_decisions + 1))
            t = 0
            decs = []
            for j in range(count):
                obs = None if j == 0 else int(gen.integers(n_obs))
                action = int(gen.integers(n_actions))
                p = float(gen.uniform(0.2, 0.9))
                decs.append((t, obs, action, p))
                t += int(gen.integers(1, 4))
            horizon = max(horizon, t)
            decisions[n] = decs
        n_rewards = int(gen.integers(1, 4))
        rewards = [
            (int(gen.integers(horizon + 1)), float(gen.choice([-1.0, 1.0])))
            for _ in range(n_rewards)
        ]
        episodes.append(
            make_episode(episode_id=k, decisions_by_agent=decisions, rewards=rewards)
        )
    return episodes


def toy_theta(episodes, n_nodes, seed, n_actions=3, n_obs=4):
    agent_ids = sorted(tr.agent_id for tr in episodes[0].agents)
    return {
        n: random_params(n_nodes, n_obs, n_actions, seed=seed + 13 * n, agent_id=n)
        for n in agent_ids
    }


def reference_q_function(theta_eval, theta_ref, episodes, cfg):
    """Sigma-weighted expected complete-data log-likelihood, evaluated with
    posteriors under ``theta_ref``. The Jensen bound differs from this by
    terms constant in ``theta_eval``, so M-step optimality can be checked
    on it directly."""
    r_min = cfg.r_min if cfg.r_min is not None else min_reward(episodes)
    total = 0.0
    for ep in episodes:
        tracks = {tr.agent_id: tr for tr in ep.agents}
        for step, r in ep.rewards:
            if r - r_min <= 0:
                continue
            log_sigma = step * math.log(cfg.gamma) + math.log(r - r_min)
            per_agent = {}
            for n, tr in tracks.items():
                decs = [d for d in tr.decisions if d.start_step <= step]
                acts = [d.action for d in decs]
                obs = [d.obs for d in decs[1:]]
                log_sigma -= math.fsum(math.log(d.behavior_prob) for d in decs)
                phi, xi = node_posteriors(theta_ref[n], acts, obs, len(acts) - 1)
                from sarem.fsc import sequence_loglik

                log_sigma += float(sequence_loglik(theta_ref[n], acts, obs)[-1])
                per_agent[n] = (acts, obs, phi, xi)
            sigma = math.exp(log_sigma)
            for n, (acts, obs, phi, xi) in per_agent.items():
                p = theta_eval[n]
                term = float(phi[0] @ np.log(p.start))
                term += float(phi[0] @ np.log(p.emit0[:, acts[0]]))
                for tau in range(1, len(acts)):
                    term += float(phi[tau] @ np.log(p.emit[:, obs[tau - 1], acts[tau]]))
                for tau in range(len(acts) - 1):
                    term += float(
                        (xi[tau] * np.log(p.trans[:, obs[tau], :])).sum()
                    )
                total += sigma * term
    return total


class TestEStep:
    def test_single_node_posteriors_are_one(self):
        episodes = random_toy_dataset(seed=0, n_agents=2)
        theta = toy_theta(episodes, n_nodes=1, seed=5)
        for ep in episodes:
            for tr in ep.agents:
                acts = [d.action for d in tr.decisions]
                obs = [d.obs for d in tr.decisions[1:]]
                phi, xi = node_posteriors(theta[tr.agent_id], acts, obs)
                assert np.allclose(phi, 1.0, atol=1e-12)
                assert np.allclose(xi, 1.0, atol=1e-12)

    def test_all_equal_rewards_zero_out(self):
        episodes = [
            make_episode(
                episode_id=k,
                decisions_by_agent={0: [(0, None, k % 2, 0.5)]},
                rewards=[(0, 1.0), (1, 1.0)],
            )
            for k in range(3)
        ]
        theta = {0: random_params(2, 4, 3, seed=1, agent_id=0)}
        buffers, lb = e_step(theta, episodes, LearnConfig())
        assert np.all(buffers.rtilde == 0.0)
        assert np.all(buffers.sigma == 0.0)
        assert lb == 0.0

    @pytest.mark.parametrize("seed", range(6))
    def test_posteriors_match_enumeration(self, seed):
        params = random_params(2, 3, 3, seed=seed)
        gen = np.random.default_rng(seed + 50)
        n = int(gen.integers(2, 6))
        acts = gen.integers(0, 3, size=n).tolist()
        obs = gen.integers(0, 3, size=n - 1).tolist()
        for t_end in range(n):
            phi, xi = node_posteriors(params, acts, obs, t_end)
            phi_bf, xi_bf = brute_force_posteriors(params, acts, obs, t_end)
            assert np.allclose(phi, phi_bf, atol=1e-10)
            assert np.allclose(xi, xi_bf, atol=1e-10)

    def test_posterior_rows_normalized(self):
        params = random_params(3, 4, 4, seed=9)
        gen = np.random.default_rng(3)
        acts = gen.integers(0, 4, size=7).tolist()
        obs = gen.integers(0, 4, size=6).tolist()
        phi, xi = node_posteriors(params, acts, obs)
        assert np.allclose(phi.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(xi.sum(axis=(1, 2)), 1.0, atol=1e-9)

    def test_reweighted_rewards_formula(self):
        # single agent, two decisions, one +1 and one -1 event
        gamma = 0.9
        ep = make_episode(
            decisions_by_agent={0: [(0, None, 1, 0.4), (3, 2, 0, 0.8)]},
            rewards=[(2, -1.0), (5, 1.0)],
        )
        theta = {0: random_params(2, 4, 3, seed=2, agent_id=0)}
        buffers, lb = e_step(theta, [ep], LearnConfig(gamma=gamma))
        # r_min = -1: the -1 event carries nothing, the +1 event weight
        # gamma^5 * 2 / (0.4 * 0.8), scaled by the prefix likelihood
        assert buffers.rtilde[0] == 0.0
        expected_rt = gamma**5 * 2.0 / (0.4 * 0.8)
        assert buffers.rtilde[1] == pytest.approx(expected_rt, rel=1e-12)
        from sarem.fsc import sequence_likelihood

        lik = sequence_likelihood(theta[0], [1, 0], [2])[-1]
        assert buffers.sigma[1] == pytest.approx(expected_rt * lik, rel=1e-12)
        assert lb == pytest.approx(buffers.sigma.sum(), rel=1e-12)

    def test_r_min_override_validated(self):
        ep = make_episode(
            decisions_by_agent={0: [(0, None, 0, 0.5)]}, rewards=[(0, -1.0)]
        )
        theta = {0: random_params(1, 2, 2, seed=3, agent_id=0)}
        with pytest.raises(ValueError, match="r_min"):
            e_step(theta, [ep], LearnConfig(r_min=0.0))


class TestMStep:
    def test_zero_sigma_copies_theta_exactly(self):
        episodes = [
            make_episode(
                episode_id=0,
                decisions_by_agent={0: [(0, None, 0, 0.5), (1, 2, 1, 0.5)]},
                rewards=[(0, 1.0), (1, 1.0)],
            )
        ]
        theta = {0: random_params(2, 4, 3, seed=4, agent_id=0)}
        buffers, _ = e_step(theta, episodes, LearnConfig())
        new = m_step(buffers, theta)
        assert new[0] is theta[0]

    def test_single_support_action_goes_to_one(self):
        # the only positively-weighted decisions always take action 2
        episodes = [
            make_episode(
                episode_id=k,
                decisions_by_agent={0: [(0, None, 2, 0.5)]},
                rewards=[(0, 1.0), (0, -1.0)],
            )
            for k in range(4)
        ]
        theta = {0: random_params(1, 2, 3, seed=5, agent_id=0)}
        buffers, _ = e_step(theta, episodes, LearnConfig())
        new = m_step(buffers, theta)
        assert new[0].emit0[0, 2] > 1.0 - 1e-9

    def test_shape_mismatch_rejected(self):
        episodes = random_toy_dataset(seed=1)
        theta = toy_theta(episodes, n_nodes=2, seed=6)
        buffers, _ = e_step(theta, episodes, LearnConfig())
        wrong = toy_theta(episodes, n_nodes=3, seed=7)
        with pytest.raises(ValueError, match="buffers"):
            m_step(buffers, wrong)

    @pytest.mark.parametrize("seed", range(5))
    def test_m_step_counts_match_posterior_reference(self, seed):
        """The batched backward accumulation must agree with per-event
        posteriors computed by the single-sequence routine."""
        episodes = random_toy_dataset(seed=seed, n_agents=2)
        theta = toy_theta(episodes, n_nodes=2, seed=seed + 30)
        cfg = LearnConfig(gamma=0.95)
        buffers, _ = e_step(theta, episodes, cfg)
        new = m_step(buffers, theta)

        from sarem.poem import PROB_FLOOR

        for n, params in theta.items():
            q, o_sz, m_sz = 2, 4, 3
            a_start = np.zeros(q)
            a_emit0 = np.zeros((q, m_sz))
            a_emit = np.zeros((q, o_sz, m_sz))
            a_trans = np.zeros((q, o_sz, q))
            for k, ep in enumerate(episodes):
                tr = next(t for t in ep.agents if t.agent_id == n)
                acts = [d.action for d in tr.decisions]
                obs = [d.obs for d in tr.decisions[1:]]
                starts = [d.start_step for d in tr.decisions]
                for e_idx in range(buffers.data.n_events):
                    if buffers.data.ev_ep[e_idx] != k:
                        continue
                    sigma = buffers.sigma[e_idx]
                    if sigma == 0.0:
                        continue
                    t_end = int(buffers.data.ev_tprefix[n][e_idx])
                    phi, xi = node_posteriors(params, acts, obs, t_end)
                    a_start += sigma * phi[0]
                    a_emit0[:, acts[0]] += sigma * phi[0]
                    for tau in range(1, t_end + 1):
                        a_emit[:, obs[tau - 1], acts[tau]] += sigma * phi[tau]
                    for tau in range(t_end):
                        a_trans[:, obs[tau], :] += sigma * xi[tau]

            def norm(counts, old):
                mass = counts.sum(-1, keepdims=True)
                out = (counts + PROB_FLOOR) / (counts + PROB_FLOOR).sum(-1, keepdims=True)
                return np.where(mass > 0, out, old)

            assert np.allclose(new[n].start, norm(a_start, params.start), atol=1e-10)
            assert np.allclose(new[n].emit0, norm(a_emit0, params.emit0), atol=1e-10)
            assert np.allclose(new[n].emit, norm(a_emit, params.emit), atol=1e-10)
            assert np.allclose(new[n].trans, norm(a_trans, params.trans), atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_m_step_does_not_decrease_bound(self, seed):
        episodes = random_toy_dataset(seed=seed + 200, n_agents=2)
        theta = toy_theta(episodes, n_nodes=2, seed=seed)
        cfg = LearnConfig(gamma=0.9)
        buffers, _ = e_step(theta, episodes, cfg)
        if not np.any(buffers.sigma > 0):
            pytest.skip("degenerate draw: no positive-weight events")
        new = m_step(buffers, theta)
        q_old = reference_q_function(theta, theta, episodes, cfg)
        q_new = reference_q_function(new, theta, episodes, cfg)
        assert q_new >= q_old - 1e-9 * abs(q_old)


class TestPoemTrain:
    def test_zero_iterations_is_identity(self):
        episodes = random_toy_dataset(seed=3)
        theta = toy_theta(episodes, n_nodes=2, seed=8)
        out, stats = poem_train(theta, episodes, LearnConfig(), max_inner=0)
        assert out is theta
        assert stats.lower_bound_trace == []
        assert not stats.converged

    def test_all_equal_rewards_converges_immediately(self):
        episodes = [
            make_episode(
                episode_id=0,
                decisions_by_agent={0: [(0, None, 0, 0.5)]},
                rewards=[(0, 1.0)],
            ),
            make_episode(
                episode_id=1,
                decisions_by_agent={0: [(0, None, 1, 0.5)]},
                rewards=[(0, 1.0)],
            ),
        ]
        theta = {0: random_params(2, 4, 3, seed=9, agent_id=0)}
        out, stats = poem_train(theta, episodes, LearnConfig())
        assert stats.iterations_run == 1
        assert stats.converged
        assert out[0] is theta[0]

    def test_two_armed_bandit_recovers_optimal_arm(self):
        # arm 0 pays +1, arm 1 pays 0 (logged as a zero-value event);
        # uniform behavior; the optimum puts all first-decision mass on arm 0
        gen = np.random.default_rng(7)
        episodes = []
        for k in range(200):
            arm = int(gen.integers(2))
            episodes.append(
                make_episode(
                    episode_id=k,
                    decisions_by_agent={0: [(0, None, arm, 0.5)]},
                    rewards=[(0, 1.0 if arm == 0 else 0.0)],
                )
            )
        spec_params = random_params(1, 2, 2, seed=10, agent_id=0)
        cfg = LearnConfig(gamma=0.999)
        trained, stats = poem_train({0: spec_params}, episodes, cfg)
        assert stats.r_min_used == 0.0
        assert trained[0].emit0[0, 0] >= 0.99
        assert empirical_value(episodes, trained, cfg) >= empirical_value(
            episodes, {0: spec_params}, cfg
        )

    @pytest.mark.parametrize("seed", range(8))
    def test_lower_bound_trace_monotone(self, seed):
        episodes = random_toy_dataset(seed=seed + 500, n_agents=2, n_episodes=8)
        theta = toy_theta(episodes, n_nodes=3, seed=seed)
        _, stats = poem_train(theta, episodes, LearnConfig(gamma=0.95), tol=1e-6, max_inner=40)
        trace = stats.lower_bound_trace
        for a, b in zip(trace, trace[1:]):
            assert b >= a - 1e-9 * abs(a)

    @pytest.mark.parametrize("seed", range(4))
    def test_training_value_does_not_degrade(self, seed):
        episodes = random_toy_dataset(seed=seed + 900, n_agents=2, n_episodes=10)
        theta = toy_theta(episodes, n_nodes=2, seed=seed + 3)
        cfg = LearnConfig(gamma=0.95)
        trained, _ = poem_train(theta, episodes, cfg, tol=1e-5, max_inner=60)
        assert empirical_value(episodes, trained, cfg) >= empirical_value(episodes, theta, cfg) - 1e-9

    def test_bitwise_determinism(self):
        episodes = random_toy_dataset(seed=42, n_agents=2, n_episodes=8)
        theta = toy_theta(episodes, n_nodes=3, seed=11)
        cfg = LearnConfig(gamma=0.97)
        a, stats_a = poem_train(theta, episodes, cfg, tol=1e-5, max_inner=25)
        b, stats_b = poem_train(theta, episodes, cfg, tol=1e-5, max_inner=25)
        assert stats_a.lower_bound_trace == stats_b.lower_bound_trace
        for n in a:
            for name in ("start", "emit0", "emit", "trans"):
                assert np.array_equal(getattr(a[n], name), getattr(b[n], name))

    def test_returned_rows_strictly_positive(self):
        episodes = random_toy_dataset(seed=77, n_agents=1, n_episodes=8)
        theta = toy_theta(episodes, n_nodes=2, seed=1)
        trained, _ = poem_train(theta, episodes, LearnConfig(), max_inner=20)
        assert trained[0].strictly_positive()

    def test_stats_csv(self, tmp_path):
        episodes = random_toy_dataset(seed=5)
        theta = toy_theta(episodes, n_nodes=2, seed=2)
        _, stats = poem_train(theta, episodes, LearnConfig(), max_inner=5)
        path = tmp_path / "trace.csv"
        stats.write_csv(str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iteration,lower_bound"
        assert len(lines) == len(stats.lower_bound_trace) + 1
