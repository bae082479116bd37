"""Hand-coded expert, expert/random mixture, and batch dataset generation.

The expert is a deterministic heuristic over the agent's own knowledge:

* a ground vehicle carrying a victim returns to the muster;
* a ground vehicle standing in a site it believes holds victims picks up;
* otherwise a ground vehicle heads for the most urgent known site, breaking
  ties toward staleness (least recently observed) and then the lowest id;
* the air vehicle sweeps victim sites, unvisited first, then stalest.

The behavior policy that actually generates data mixes the expert with the
uniform policy: with probability ``rho`` it emits the expert's macro,
otherwise a uniform draw over the initiable macros. Every logged
probability is the exact mixture mass of the emitted macro, which keeps
it strictly positive for every initiable macro as long as ``rho < 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .dataset import Episode
from .sim.engine import DecisionContext, run_episode
from .sim.observe import AgentKnowledge
from .sim.scenario import MUSTER_SITE, UGV, ScenarioConfig, scenario_digest


@dataclass(frozen=True)
class BehaviorConfig:
    rho: float
    episodes: int
    master_seed: int
    scenario: ScenarioConfig

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            # rho = 1 would give unchosen macros zero probability, which the
            # off-policy estimator cannot absorb
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")


def expert_action(
    knowledge: AgentKnowledge,
    carrying: bool,
    self_site: int | None,
    kind: str,
    scenario: ScenarioConfig,
) -> int:
    """Deterministic expert macro for one decision point."""
    victim_sites = [s.site_id for s in scenario.victim_sites]
    if kind == UGV:
        if carrying:
            return MUSTER_SITE - 1
        if self_site in victim_sites:
            info = knowledge.sites.get(self_site)
            if info is not None and info.state > 0:
                return scenario.pickup_macro
        # urgency first, then stalest, then lowest id; unknown sites are
        # maximally stale with no known urgency
        def ugv_key(site_id: int):
            info = knowledge.sites.get(site_id)
            state = info.state if info is not None else 0
            stamp = info.stamp if info is not None else -1
            return (-state, stamp, site_id)

        return min(victim_sites, key=ugv_key) - 1

    def uav_key(site_id: int):
        info = knowledge.sites.get(site_id)
        return (info.stamp if info is not None else -1, site_id)

    return min(victim_sites, key=uav_key) - 1


def mixture_decision(
    expert_macro: int,
    initiable: list[int],
    rho: float,
    rng: np.random.Generator,
) -> tuple[int, float]:
    """Sample from the rho-mixture of expert and uniform; return (macro, prob)."""
    if not initiable:
        raise ValueError("empty initiable macro set")
    if expert_macro not in initiable:
        raise ValueError(f"expert macro {expert_macro} is not initiable")
    if rng.random() < rho:
        macro = expert_macro
    else:
        macro = initiable[int(rng.integers(len(initiable)))]
    prob = rho * (macro == expert_macro) + (1.0 - rho) / len(initiable)
    return macro, prob


class MixtureDecider:
    """Behavior policy: expert with probability rho, else uniform."""

    def __init__(self, rho: float, scenario: ScenarioConfig):
        self.rho = rho
        self.scenario = scenario
        self._last_site: dict[int, int] = {}

    def reset(self) -> None:
        self._last_site = {}

    def decide(self, agent_id, obs_code, initiable, context: DecisionContext, rng):
        body = context.world.agents[agent_id]
        self_site = context.scenario.site_at(body.pos)
        if self_site is None:
            self_site = self._last_site.get(agent_id, MUSTER_SITE)
        else:
            self._last_site[agent_id] = self_site
        expert = expert_action(
            context.knowledge[agent_id],
            body.carrying is not None,
            self_site,
            body.kind,
            context.scenario,
        )
        return mixture_decision(expert, initiable, self.rho, rng)


def generate_dataset(cfg: BehaviorConfig) -> list[Episode]:
    """Simulate ``cfg.episodes`` episodes under the mixture behavior policy.

    Episode i draws from the stream keyed ``(master_seed, episode=i)``, so
    regeneration with the same config is byte-identical and episodes are
    independent of generation order.
    """
    digest = scenario_digest(cfg.scenario)
    decider = MixtureDecider(cfg.rho, cfg.scenario)
    episodes = []
    for i in range(cfg.episodes):
        stream = rng_mod.stream(cfg.master_seed, rng_mod.NS_EPISODE, i)
        episodes.append(
            run_episode(cfg.scenario, decider, stream, episode_id=i, digest=digest)
        )
    return episodes
