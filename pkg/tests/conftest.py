"""Shared builders and brute-force oracles for the test suite."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from sarem.fsc import AgentSpec, FscParams, init_dirichlet
from sarem.dataset import AgentDecision, AgentTrack, Episode


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(n_nodes, n_obs, n_actions, seed, agent_id=0) -> FscParams:
    spec = AgentSpec(agent_id=agent_id, n_actions=n_actions, n_obs=n_obs, n_nodes=n_nodes)
    return init_dirichlet(spec, np.random.default_rng(seed))


def brute_force_prefix_likelihoods(params: FscParams, actions, observations) -> np.ndarray:
    """Prefix likelihoods by explicit enumeration over all node sequences."""
    q = params.spec.n_nodes
    n = len(actions)
    out = np.zeros(n)
    for t in range(n):
        total = 0.0
        for nodes in itertools.product(range(q), repeat=t + 1):
            p = params.start[nodes[0]] * params.emit0[nodes[0], actions[0]]
            for tau in range(1, t + 1):
                o, m = observations[tau - 1], actions[tau]
                p *= params.trans[nodes[tau - 1], o, nodes[tau]] * params.emit[nodes[tau], o, m]
            total += p
        out[t] = total
    return out


def brute_force_posteriors(params: FscParams, actions, observations, t_end):
    """Node marginals and pairwise posteriors by enumeration, for the prefix
    ending at decision ``t_end``."""
    q = params.spec.n_nodes
    phi = np.zeros((t_end + 1, q))
    xi = np.zeros((t_end, q, q))
    total = 0.0
    for nodes in itertools.product(range(q), repeat=t_end + 1):
        p = params.start[nodes[0]] * params.emit0[nodes[0], actions[0]]
        for tau in range(1, t_end + 1):
            o, m = observations[tau - 1], actions[tau]
            p *= params.trans[nodes[tau - 1], o, nodes[tau]] * params.emit[nodes[tau], o, m]
        total += p
        for tau, u in enumerate(nodes):
            phi[tau, u] += p
        for tau in range(t_end):
            xi[tau, nodes[tau], nodes[tau + 1]] += p
    return phi / total, xi / total


def make_episode(
    episode_id=0,
    decisions_by_agent=None,
    rewards=(),
    length_steps=None,
    digest="test",
):
    """Assemble an episode from `{agent_id: [(t, obs, action, p), ...]}`."""
    tracks = []
    max_t = 0
    for agent_id in sorted(decisions_by_agent):
        decs = tuple(
            AgentDecision(start_step=t, obs=obs, action=a, behavior_prob=p)
            for (t, obs, a, p) in decisions_by_agent[agent_id]
        )
        max_t = max(max_t, max((d.start_step for d in decs), default=0))
        tracks.append(AgentTrack(agent_id=agent_id, decisions=decs))
    rewards = tuple(sorted(((int(t), float(r)) for t, r in rewards)))
    if rewards:
        max_t = max(max_t, max(t for t, _ in rewards))
    return Episode(
        episode_id=episode_id,
        scenario_digest=digest,
        length_steps=length_steps if length_steps is not None else max_t + 1,
        agents=tuple(tracks),
        rewards=rewards,
    )
