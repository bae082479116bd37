"""Episode execution: decision points, logging, and policy rollouts.

One episode runs single-threaded. At the start of each primitive step any
agent whose macro has terminated (or that has not decided yet) picks a new
macro. The very first decision of an episode is taken before any
observation exists; every later decision consumes the five-field
macro-observation built from the agent's knowledge. A decision whose macro
is already terminal at selection burns the step doing nothing and the
agent re-decides next step, so agents take at most one decision per step.

After the joint primitive action is applied, sensing and communication run
automatically. The episode ends when every victim is either delivered or
dead, or when the step budget runs out.

Deciders renormalize the controller's output row over the initiable macro
set and log the renormalized probability, so logged likelihoods always
describe the law the action was actually drawn from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .. import rng as rng_mod
from ..dataset import AgentDecision, AgentTrack, Episode, LearnConfig
from ..errors import MacroNotInitiable
from ..fsc import JointPolicy
from .macros import MacroRun, initiable_macros, macro_step_action, macro_terminated, start_macro
from .observe import (
    AgentKnowledge,
    build_observation,
    encode_observation,
    observe_and_communicate,
)
from .scenario import MUSTER_SITE, UGV, ScenarioConfig, scenario_digest
from .world import WorldState, do_nothing, init_world, simulate_primitive_step


class Decider(Protocol):
    """Chooses a macro at a decision point.

    ``obs_code`` is None on an agent's first decision of the episode.
    Returns the macro index (must be initiable) and its probability under
    the decider's law.
    """

    def decide(
        self,
        agent_id: int,
        obs_code: int | None,
        initiable: list[int],
        context: "DecisionContext",
        rng: np.random.Generator,
    ) -> tuple[int, float]: ...

    def reset(self) -> None: ...


@dataclass
class DecisionContext:
    """Everything a decider may look at besides the encoded observation."""

    world: WorldState
    scenario: ScenarioConfig
    knowledge: dict[int, AgentKnowledge]


# ---------------------------------------------------------------------------
# controller-driven decisions
# ---------------------------------------------------------------------------

def masked_row(row: np.ndarray, initiable: list[int]) -> np.ndarray:
    """Restrict an output row to the initiable macros and renormalize."""
    masked = np.zeros_like(row)
    masked[initiable] = row[initiable]
    total = masked.sum()
    if total <= 0.0:
        raise MacroNotInitiable("no initiable macro has positive probability")
    return masked / total


class FscDecider:
    """Runs one finite-state controller per agent."""

    def __init__(self, policy: JointPolicy):
        self.policy = policy
        self._nodes: dict[int, int | None] = {}
        self.reset()

    def reset(self) -> None:
        self._nodes = {n: None for n in self.policy}

    def decide(self, agent_id, obs_code, initiable, context, rng):
        params = self.policy[agent_id]
        node = self._nodes[agent_id]
        if node is None:
            node = rng_mod.sample_index(rng, params.start)
            row = params.emit0[node]
        else:
            if obs_code is None:
                raise ValueError("non-first decision without an observation")
            node = rng_mod.sample_index(rng, params.trans[node, obs_code])
            row = params.emit[node, obs_code]
        self._nodes[agent_id] = node
        probs = masked_row(row, initiable)
        action = rng_mod.sample_index(rng, probs)
        return action, float(probs[action])


class UniformDecider:
    """Uniform over the initiable macros; the fully random baseline."""

    def reset(self) -> None:
        pass

    def decide(self, agent_id, obs_code, initiable, context, rng):
        action = initiable[int(rng.integers(len(initiable)))]
        return action, 1.0 / len(initiable)


class GreedyDecider:
    """Omniscient scripted policy for simulator checks and upper bounds.

    Ground vehicles head for the globally lowest-health victim still in
    the field (each vehicle claims a distinct victim when enough remain),
    pick it up, and deliver it; the air vehicle cycles victim sites.
    Reads ground truth, so it is not a legal behavior policy — rollouts
    only.
    """

    def reset(self) -> None:
        pass

    def decide(self, agent_id, obs_code, initiable, context, rng):
        world, scenario = context.world, context.scenario
        body = world.agents[agent_id]
        if body.kind == UGV:
            if body.carrying is not None:
                return MUSTER_SITE - 1, 1.0
            pending = sorted(
                (v for v in world.victims if not v.resolved and v.carried_by is None),
                key=lambda v: (v.health, v.victim_id),
            )
            if not pending:
                return MUSTER_SITE - 1, 1.0
            ugvs = [a for a in world.agents if a.kind == UGV and a.carrying is None]
            rank = next(i for i, a in enumerate(ugvs) if a.agent_id == agent_id)
            target = pending[rank % len(pending)]
            target_site = scenario.site_at(target.pos)
            if scenario.site_at(body.pos) == target_site and scenario.pickup_macro in initiable:
                return scenario.pickup_macro, 1.0
            return target_site - 1, 1.0
        sites = [s.site_id for s in scenario.victim_sites]
        here = scenario.site_at(body.pos)
        nxt = sites[(sites.index(here) + 1) % len(sites)] if here in sites else sites[0]
        return nxt - 1, 1.0


# ---------------------------------------------------------------------------
# episode loop
# ---------------------------------------------------------------------------

@dataclass
class _AgentRuntime:
    knowledge: AgentKnowledge = field(default_factory=AgentKnowledge)
    macro_run: MacroRun | None = None
    decisions: list[AgentDecision] = field(default_factory=list)
    seen_stamps: dict[int, int] = field(default_factory=dict)
    last_site: int = MUSTER_SITE


def run_episode(
    scenario: ScenarioConfig,
    decider: Decider,
    rng: np.random.Generator,
    episode_id: int = 0,
    digest: str | None = None,
) -> Episode:
    """Simulate one episode and log every decision and reward event."""
    world = init_world(scenario, rng)
    decider.reset()
    runtimes = {a.agent_id: _AgentRuntime() for a in scenario.agents}
    knowledge = {aid: rt.knowledge for aid, rt in runtimes.items()}
    context = DecisionContext(world, scenario, knowledge)
    rewards: list[tuple[int, float]] = []
    while world.clock < scenario.max_steps and not world.all_resolved():
        actions = {}
        for body in world.agents:
            rt = runtimes[body.agent_id]
            if rt.macro_run is None or macro_terminated(rt.macro_run, body, world, scenario):
                if rt.decisions:
                    obs = build_observation(
                        rt.knowledge, body.carrying is not None, rt.last_site, rt.seen_stamps
                    )
                    obs_code = encode_observation(obs, scenario.n_sites)
                else:
                    obs_code = None
                initiable = initiable_macros(body, world, scenario)
                macro, prob = decider.decide(body.agent_id, obs_code, initiable, context, rng)
                rt.macro_run = start_macro(macro, body, world, scenario)
                rt.decisions.append(AgentDecision(world.clock, obs_code, macro, prob))
                rt.seen_stamps = {s: k.stamp for s, k in rt.knowledge.sites.items()}
            if macro_terminated(rt.macro_run, body, world, scenario):
                actions[body.agent_id] = do_nothing()  # terminal at selection: burn one step
            else:
                actions[body.agent_id] = macro_step_action(rt.macro_run, body, world, scenario, rng)
        rewards.extend(simulate_primitive_step(world, scenario, actions, rng))
        observe_and_communicate(world, knowledge, scenario, rng)
        for body in world.agents:
            site = scenario.site_at(body.pos)
            if site is not None:
                runtimes[body.agent_id].last_site = site
    return Episode(
        episode_id=episode_id,
        scenario_digest=digest if digest is not None else scenario_digest(scenario),
        length_steps=world.clock,
        agents=tuple(
            AgentTrack(aid, tuple(runtimes[aid].decisions)) for aid in sorted(runtimes)
        ),
        rewards=tuple(rewards),
    )


# ---------------------------------------------------------------------------
# rollout evaluation
# ---------------------------------------------------------------------------

@dataclass
class RolloutResult:
    discounted: list[float]
    undiscounted: list[float]

    @property
    def mean_discounted(self) -> float:
        return float(np.mean(self.discounted))

    @property
    def mean_undiscounted(self) -> float:
        return float(np.mean(self.undiscounted))


def episode_returns(ep: Episode, gamma: float) -> tuple[float, float]:
    disc = math.fsum(r * gamma**t for t, r in ep.rewards)
    undisc = math.fsum(r for _, r in ep.rewards)
    return disc, undisc


def rollout_evaluate(
    policy: JointPolicy | Decider,
    scenario: ScenarioConfig,
    n_episodes: int,
    cfg: LearnConfig,
    master_seed: int,
) -> RolloutResult:
    """Run fresh episodes under a policy and collect its returns.

    Accepts either a joint controller (whose alphabets must match the
    scenario) or any ``Decider``. Episode i draws from the stream keyed
    ``(master_seed, episode=i)``.
    """
    if isinstance(policy, dict):
        for n, params in policy.items():
            spec = params.spec
            body = scenario.agents[n] if n < len(scenario.agents) else None
            if body is None or spec.n_obs != scenario.n_observations or spec.n_actions != scenario.n_actions(body.kind):
                raise ValueError(f"agent {n}: controller alphabets do not match the scenario")
        decider: Decider = FscDecider(policy)
    else:
        decider = policy
    digest = scenario_digest(scenario)
    disc, undisc = [], []
    for i in range(n_episodes):
        stream = rng_mod.stream(master_seed, rng_mod.NS_EPISODE, i)
        ep = run_episode(scenario, decider, stream, episode_id=i, digest=digest)
        d, u = episode_returns(ep, cfg.gamma)
        disc.append(d)
        undisc.append(u)
    return RolloutResult(disc, undisc)
