import io

import numpy as np
import pytest

from sarem.errors import DataFormatError
from sarem.fsc import (
    AgentSpec,
    FscParams,
    FscRuntimeState,
    fsc_step,
    init_dirichlet,
    read_policy,
    sequence_likelihood,
    sequence_loglik,
    write_policy,
)

from conftest import brute_force_prefix_likelihoods, random_params


def one_hot_params(spec, node_seq_action=0):
    """Deterministic controller: single action, identity-ish transitions."""
    q, m, o = spec.n_nodes, spec.n_actions, spec.n_obs
    start = np.zeros(q)
    start[0] = 1.0
    emit0 = np.zeros((q, m))
    emit0[:, node_seq_action] = 1.0
    emit = np.zeros((q, o, m))
    emit[:, :, node_seq_action] = 1.0
    trans = np.zeros((q, o, q))
    for i in range(q):
        trans[i, :, i] = 1.0
    return FscParams(spec=spec, start=start, emit0=emit0, emit=emit, trans=trans)


class TestAgentSpec:
    def test_rejects_zero_sized_alphabets(self):
        with pytest.raises(ValueError):
            AgentSpec(agent_id=0, n_actions=0, n_obs=4, n_nodes=1)
        with pytest.raises(ValueError):
            AgentSpec(agent_id=0, n_actions=3, n_obs=4, n_nodes=0)

    def test_sar_alphabet_sizes(self):
        # 18 s^2 observations at s=6; 7 ground / 6 air macro-actions
        ugv = AgentSpec(agent_id=1, n_actions=7, n_obs=648, n_nodes=10)
        uav = AgentSpec(agent_id=0, n_actions=6, n_obs=648, n_nodes=10)
        assert ugv.n_obs == 18 * 6 * 6
        assert uav.n_actions == 6


class TestInitDirichlet:
    def test_single_node_start_is_point_mass(self):
        spec = AgentSpec(agent_id=0, n_actions=3, n_obs=2, n_nodes=1)
        params = init_dirichlet(spec, np.random.default_rng(0))
        assert params.start.tolist() == [1.0]

    def test_rows_sum_to_one(self):
        spec = AgentSpec(agent_id=0, n_actions=4, n_obs=5, n_nodes=2)
        params = init_dirichlet(spec, np.random.default_rng(7))
        for name in ("emit0", "emit", "trans"):
            sums = getattr(params, name).sum(axis=-1)
            assert np.allclose(sums, 1.0, atol=1e-12)

    def test_flat_dirichlet_mean(self):
        # Dirichlet(1,1) marginal mean is 1/2; Monte-Carlo check
        spec = AgentSpec(agent_id=0, n_actions=2, n_obs=1, n_nodes=1)
        gen = np.random.default_rng(99)
        draws = [init_dirichlet(spec, gen).emit0[0, 0] for _ in range(100_000)]
        assert abs(np.mean(draws) - 0.5) < 0.01

    def test_deterministic_for_fixed_stream(self):
        spec = AgentSpec(agent_id=0, n_actions=3, n_obs=4, n_nodes=2)
        a = init_dirichlet(spec, np.random.default_rng(5))
        b = init_dirichlet(spec, np.random.default_rng(5))
        assert np.array_equal(a.emit, b.emit)
        assert np.array_equal(a.trans, b.trans)


class TestFscParamsValidation:
    def test_rejects_off_simplex_rows(self):
        spec = AgentSpec(agent_id=0, n_actions=2, n_obs=1, n_nodes=1)
        with pytest.raises(ValueError, match="off the simplex"):
            FscParams(
                spec=spec,
                start=np.array([1.0]),
                emit0=np.array([[0.6, 0.6]]),
                emit=np.array([[[0.5, 0.5]]]),
                trans=np.array([[[1.0]]]),
            )

    def test_rejects_negative_entries(self):
        spec = AgentSpec(agent_id=0, n_actions=2, n_obs=1, n_nodes=1)
        with pytest.raises(ValueError, match="negative"):
            FscParams(
                spec=spec,
                start=np.array([1.0]),
                emit0=np.array([[-0.5, 1.5]]),
                emit=np.array([[[0.5, 0.5]]]),
                trans=np.array([[[1.0]]]),
            )

    def test_arrays_are_read_only(self):
        params = random_params(2, 3, 2, seed=1)
        with pytest.raises(ValueError):
            params.emit[0, 0, 0] = 0.5


class TestFscStep:
    def test_deterministic_params_give_unique_action(self):
        spec = AgentSpec(agent_id=0, n_actions=3, n_obs=2, n_nodes=2)
        params = one_hot_params(spec, node_seq_action=1)
        gen = np.random.default_rng(0)
        action, state, prob = fsc_step(params, FscRuntimeState(), None, gen)
        assert (action, prob) == (1, 1.0)
        action, _, prob = fsc_step(params, state, 0, gen)
        assert (action, prob) == (1, 1.0)

    def test_single_node_never_changes(self):
        params = random_params(1, 3, 4, seed=3)
        gen = np.random.default_rng(1)
        state = FscRuntimeState()
        for obs in (None, 0, 1, 2, 0, 1):
            _, state, _ = fsc_step(params, state, obs, gen)
            assert state.current_node == 0

    def test_out_of_range_observation_rejected(self):
        params = random_params(2, 3, 4, seed=3)
        gen = np.random.default_rng(1)
        _, state, _ = fsc_step(params, FscRuntimeState(), None, gen)
        with pytest.raises(ValueError):
            fsc_step(params, state, 3, gen)
        with pytest.raises(ValueError):
            fsc_step(params, state, None, gen)

    def test_sampling_frequency_matches_row(self):
        # emit row (0.3, 0.7) under a single node: action-1 frequency ~ 0.7
        spec = AgentSpec(agent_id=0, n_actions=2, n_obs=1, n_nodes=1)
        params = FscParams(
            spec=spec,
            start=np.array([1.0]),
            emit0=np.array([[0.5, 0.5]]),
            emit=np.array([[[0.3, 0.7]]]),
            trans=np.array([[[1.0]]]),
        )
        gen = np.random.default_rng(42)
        state = FscRuntimeState(0, 1)  # past the first decision
        hits = sum(fsc_step(params, state, 0, gen)[0] == 1 for _ in range(100_000))
        assert abs(hits / 100_000 - 0.7) < 0.01

    def test_returned_probability_matches_law(self):
        params = random_params(3, 4, 5, seed=8)
        gen = np.random.default_rng(2)
        action, state, prob = fsc_step(params, FscRuntimeState(), None, gen)
        # first decision: probability under emit0 at the drawn node
        assert prob == pytest.approx(float(params.emit0[state.current_node, action]))
        action, state2, prob = fsc_step(params, state, 2, gen)
        assert prob == pytest.approx(float(params.emit[state2.current_node, 2, action]))


class TestSequenceLikelihood:
    def test_single_node_factorizes(self):
        params = random_params(1, 3, 4, seed=5)
        actions = [2, 0, 3, 1]
        observations = [1, 0, 2]
        expected = params.emit0[0, 2]
        out = sequence_likelihood(params, actions, observations)
        assert out[0] == pytest.approx(float(expected), rel=1e-12)
        for t, (o, m) in enumerate(zip(observations, actions[1:]), start=1):
            expected *= params.emit[0, o, m]
            assert out[t] == pytest.approx(float(expected), rel=1e-12)

    def test_uniform_policy_gives_powers(self):
        spec = AgentSpec(agent_id=0, n_actions=4, n_obs=2, n_nodes=3)
        q, m, o = 3, 4, 2
        params = FscParams(
            spec=spec,
            start=np.full(q, 1 / q),
            emit0=np.full((q, m), 1 / m),
            emit=np.full((q, o, m), 1 / m),
            trans=np.full((q, o, q), 1 / q),
        )
        out = sequence_likelihood(params, [0, 1, 2, 3], [0, 1, 0])
        assert np.allclose(out, [4.0 ** -(t + 1) for t in range(4)], rtol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force_enumeration(self, seed):
        params = random_params(2, 3, 3, seed=seed)
        gen = np.random.default_rng(seed + 100)
        actions = gen.integers(0, 3, size=4).tolist()
        observations = gen.integers(0, 3, size=3).tolist()
        expected = brute_force_prefix_likelihoods(params, actions, observations)
        out = sequence_likelihood(params, actions, observations)
        assert np.allclose(out, expected, atol=1e-10)

    def test_scaled_equals_naive_on_long_sequence(self):
        params = random_params(3, 4, 5, seed=77)
        gen = np.random.default_rng(1)
        actions = gen.integers(0, 5, size=21).tolist()
        observations = gen.integers(0, 4, size=20).tolist()
        # naive unscaled recursion, feasible at T <= 20
        joint = params.start * params.emit0[:, actions[0]]
        naive = [joint.sum()]
        for o, m in zip(observations, actions[1:]):
            joint = (joint @ params.trans[:, o, :]) * params.emit[:, o, m]
            naive.append(joint.sum())
        assert np.allclose(sequence_likelihood(params, actions, observations), naive, atol=1e-10)

    def test_prefix_values_non_increasing_and_positive(self):
        for seed in range(10):
            params = random_params(3, 3, 4, seed=seed)
            gen = np.random.default_rng(seed)
            actions = gen.integers(0, 4, size=12).tolist()
            observations = gen.integers(0, 3, size=11).tolist()
            vals = sequence_likelihood(params, actions, observations)
            assert np.all(vals > 0)
            assert np.all(np.diff(vals) <= 1e-15)

    def test_empty_sequence_rejected(self):
        params = random_params(2, 3, 3, seed=0)
        with pytest.raises(ValueError, match="empty"):
            sequence_loglik(params, [], [])

    def test_length_mismatch_rejected(self):
        params = random_params(2, 3, 3, seed=0)
        with pytest.raises(ValueError, match="len"):
            sequence_loglik(params, [0, 1], [0, 1])


class TestPolicyFile:
    def test_round_trip(self):
        policy = {0: random_params(2, 4, 3, seed=1, agent_id=0),
                  1: random_params(3, 4, 4, seed=2, agent_id=1)}
        buf = io.StringIO()
        write_policy(policy, buf)
        buf.seek(0)
        back = read_policy(buf)
        assert sorted(back) == [0, 1]
        for n in policy:
            for name in ("start", "emit0", "emit", "trans"):
                assert np.allclose(getattr(back[n], name), getattr(policy[n], name), atol=1e-15)

    def test_off_simplex_rows_rejected(self):
        policy = {0: random_params(1, 2, 2, seed=1)}
        buf = io.StringIO()
        write_policy(policy, buf)
        text = buf.getvalue().replace('"mu": [1.0]', '"mu": [0.9]')
        with pytest.raises(DataFormatError, match="line 1"):
            read_policy(io.StringIO(text))

    def test_malformed_line_reports_position(self):
        with pytest.raises(DataFormatError, match="line 1"):
            read_policy(io.StringIO("{not json}\n"))
