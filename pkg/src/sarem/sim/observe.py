"""Macro-observations, site knowledge, and range-limited communication.

Each agent keeps a per-site knowledge table mapping site id to a
``(state, stamp)`` pair, where ``state`` classifies the victims last seen
there (0 none needing help, 1 needing help, 2 critical) and ``stamp`` is
the simulator clock of the observation. Sensing and communication run
automatically every primitive step:

* a ground vehicle standing in a site sees every victim there, including
  health, so its report can distinguish critical from non-critical;
* an air vehicle over a site sees victim locations but not health, so its
  report is 0 or 1, never 2;
* each report is corrupted with probability ``obs_noise_prob``, replaced
  by a uniformly random other legal value for that sensor class;
* agents within communication range (Chebyshev distance; ground-to-ground
  uses the short range, any pair involving an air vehicle the long one)
  exchange knowledge both ways, each direction independently failing with
  probability ``comm_fail_prob``; newer stamps overwrite older ones.

An agent's own position and whether it is carrying a victim are always
known exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import MUSTER_SITE, UAV, UGV, ScenarioConfig
from .world import WorldState

STATE_NONE = 0
STATE_HELP = 1
STATE_CRITICAL = 2


@dataclass(frozen=True)
class ObservationVector:
    """The five-field macro-observation an agent decides on."""

    self_state: int          # 1 when carrying a victim
    self_location: int       # site id in 1..s
    location_state: int      # 0 / 1 / 2 classification of the self site
    second_location: int     # site id in 1..s
    second_location_state: int


def encode_observation(v: ObservationVector, n_sites: int) -> int:
    """Mixed-radix index over (2, s, 3, s, 3), in field order; range [0, 18s^2)."""
    if v.self_state not in (0, 1):
        raise ValueError(f"self_state {v.self_state} outside {{0,1}}")
    for name, loc in (("self_location", v.self_location), ("second_location", v.second_location)):
        if not 1 <= loc <= n_sites:
            raise ValueError(f"{name} {loc} outside 1..{n_sites}")
    for name, st in (("location_state", v.location_state), ("second_location_state", v.second_location_state)):
        if st not in (0, 1, 2):
            raise ValueError(f"{name} {st} outside {{0,1,2}}")
    code = v.self_state
    code = code * n_sites + (v.self_location - 1)
    code = code * 3 + v.location_state
    code = code * n_sites + (v.second_location - 1)
    code = code * 3 + v.second_location_state
    return code


def decode_observation(code: int, n_sites: int) -> ObservationVector:
    """Exact inverse of ``encode_observation``."""
    if not 0 <= code < 18 * n_sites * n_sites:
        raise ValueError(f"code {code} outside [0, {18 * n_sites * n_sites})")
    code, second_state = divmod(code, 3)
    code, second_loc = divmod(code, n_sites)
    code, loc_state = divmod(code, 3)
    self_state, self_loc = divmod(code, n_sites)
    return ObservationVector(
        self_state=self_state,
        self_location=self_loc + 1,
        location_state=loc_state,
        second_location=second_loc + 1,
        second_location_state=second_state,
    )


# ---------------------------------------------------------------------------
# knowledge and sensing
# ---------------------------------------------------------------------------

@dataclass
class SiteKnowledge:
    state: int
    stamp: int


@dataclass
class AgentKnowledge:
    sites: dict[int, SiteKnowledge] = field(default_factory=dict)

    def merge(self, site_id: int, state: int, stamp: int) -> None:
        cur = self.sites.get(site_id)
        if cur is None or stamp > cur.stamp:
            self.sites[site_id] = SiteKnowledge(state, stamp)


def classify_site(world: WorldState, scenario: ScenarioConfig, site_id: int, kind: str) -> int:
    """Ground-truth victim classification of a site for one sensor class."""
    pending = [
        v
        for v in world.victims
        if not v.dead and not v.at_muster and v.carried_by is None
        and scenario.site_at(v.pos) == site_id
    ]
    if not pending:
        return STATE_NONE
    if kind == UAV:
        return STATE_HELP  # health is not visible from the air
    if any(v.health < scenario.critical_health for v in pending):
        return STATE_CRITICAL
    return STATE_HELP


def _corrupt(report: int, kind: str, rng: np.random.Generator) -> int:
    legal = (0, 1) if kind == UAV else (0, 1, 2)
    others = [v for v in legal if v != report]
    return others[int(rng.integers(len(others)))]


def observe_and_communicate(
    world: WorldState,
    knowledge: dict[int, AgentKnowledge],
    scenario: ScenarioConfig,
    rng: np.random.Generator,
) -> None:
    """One automatic sensing + exchange round; stamps use the current clock."""
    stamp = world.clock
    # sensing, in agent-id order
    for body in world.agents:
        site_id = scenario.site_at(body.pos)
        if site_id is None:
            continue
        report = classify_site(world, scenario, site_id, body.kind)
        if scenario.obs_noise_prob > 0.0 and rng.random() < scenario.obs_noise_prob:
            report = _corrupt(report, body.kind, rng)
        knowledge[body.agent_id].sites[site_id] = SiteKnowledge(report, stamp)
    # pairwise exchange, in agent-id order
    agents = world.agents
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            a, b = agents[i], agents[j]
            reach = (
                scenario.comm_range_ugv
                if a.kind == UGV and b.kind == UGV
                else scenario.comm_range_uav
            )
            dist = max(abs(a.pos[0] - b.pos[0]), abs(a.pos[1] - b.pos[1]))
            if dist > reach:
                continue
            for src, dst in ((a, b), (b, a)):
                if scenario.comm_fail_prob > 0.0 and rng.random() < scenario.comm_fail_prob:
                    continue
                for site_id, info in knowledge[src.agent_id].sites.items():
                    knowledge[dst.agent_id].merge(site_id, info.state, info.stamp)


# ---------------------------------------------------------------------------
# macro-observation construction (at decision points)
# ---------------------------------------------------------------------------

def build_observation(
    knowledge: AgentKnowledge,
    carrying: bool,
    self_site: int,
    seen_stamps: dict[int, int],
) -> ObservationVector:
    """Assemble the five-field observation for a decision point.

    ``seen_stamps`` holds the knowledge stamps as of the agent's previous
    decision; sites whose stamp advanced since then are candidates for the
    second report, ranked by urgency, then recency, then lowest site id.
    With no news beyond the agent's own site the second fields duplicate
    the self fields.
    """
    own = knowledge.sites.get(self_site)
    location_state = own.state if own is not None else STATE_NONE
    candidates = [
        (info.state, info.stamp, site_id)
        for site_id, info in knowledge.sites.items()
        if site_id != self_site and info.stamp > seen_stamps.get(site_id, -1)
    ]
    if candidates:
        state, _, site_id = max(candidates, key=lambda c: (c[0], c[1], -c[2]))
        second_location, second_state = site_id, state
    else:
        second_location, second_state = self_site, location_state
    return ObservationVector(
        self_state=1 if carrying else 0,
        self_location=self_site,
        location_state=location_state,
        second_location=second_location,
        second_location_state=second_state,
    )


__all__ = [
    "ObservationVector",
    "encode_observation",
    "decode_observation",
    "SiteKnowledge",
    "AgentKnowledge",
    "classify_site",
    "observe_and_communicate",
    "build_observation",
    "STATE_NONE",
    "STATE_HELP",
    "STATE_CRITICAL",
    "MUSTER_SITE",
]
