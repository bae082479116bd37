"""World state and primitive-step dynamics.

The world advances in discrete steps. Each step every agent submits one
primitive action — move, pick-up, drop-off, or do-nothing — which the
world applies in agent-id order; then every victim not yet delivered
loses ``decay_rate`` health. A victim whose health reaches zero dies and
emits a single -1 reward event; a carried victim dropped at the muster is
healed to full, counts as rescued, and emits a single +1 event.

Ground vehicles move one cell per step in a cardinal direction and may
not enter obstacle cells; air vehicles cover up to ``uav_speed`` unit
moves per step and ignore obstacles entirely. A carried victim travels
with its carrier. One victim per ground vehicle at a time; air vehicles
never carry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .scenario import MUSTER_SITE, UGV, ScenarioConfig

DEATH_EPS = 1e-9  # health at or below this counts as dead


class PrimitiveAction(NamedTuple):
    kind: str                 # "move" | "pickup" | "dropoff" | "noop"
    target: tuple | int | None = None


def move(dest: tuple[int, int]) -> PrimitiveAction:
    return PrimitiveAction("move", dest)


def pick_up(victim_id: int) -> PrimitiveAction:
    return PrimitiveAction("pickup", victim_id)


def drop_off() -> PrimitiveAction:
    return PrimitiveAction("dropoff")


def do_nothing() -> PrimitiveAction:
    return PrimitiveAction("noop")


@dataclass
class Victim:
    victim_id: int
    pos: tuple[int, int]
    health: float
    carried_by: int | None = None
    at_muster: bool = False
    dead: bool = False

    @property
    def resolved(self) -> bool:
        return self.dead or self.at_muster


@dataclass
class AgentBody:
    agent_id: int
    kind: str
    pos: tuple[int, int]
    carrying: int | None = None


@dataclass
class WorldState:
    clock: int
    agents: list[AgentBody]
    victims: list[Victim]

    def all_resolved(self) -> bool:
        return all(v.resolved for v in self.victims)

    def counts(self) -> dict[str, int]:
        rescued = sum(1 for v in self.victims if v.at_muster)
        dead = sum(1 for v in self.victims if v.dead)
        carried = sum(1 for v in self.victims if v.carried_by is not None)
        afield = len(self.victims) - rescued - dead - carried
        return {"rescued": rescued, "dead": dead, "carried": carried, "afield": afield}


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _victim_counts_per_site(total: int, n_sites: int, rng: np.random.Generator) -> list[int]:
    # uniform over compositions of `total` across `n_sites` (stars and bars)
    if n_sites == 1:
        return [total]
    slots = total + n_sites - 1
    bars = sorted(rng.choice(slots, size=n_sites - 1, replace=False).tolist())
    counts, prev = [], -1
    for b in bars:
        counts.append(b - prev - 1)
        prev = b
    counts.append(slots - 1 - prev)
    return counts


def init_world(scenario: ScenarioConfig, rng: np.random.Generator) -> WorldState:
    """Place agents at the muster and victims randomly across victim sites."""
    muster_cells = [c for c in scenario.muster.cells() if c not in scenario.obstacles]
    agents = [
        AgentBody(a.agent_id, a.kind, muster_cells[i % len(muster_cells)])
        for i, a in enumerate(scenario.agents)
    ]
    sites = scenario.victim_sites
    while True:
        counts = _victim_counts_per_site(scenario.victims, len(sites), rng)
        if all(
            n <= sum(1 for c in s.cells() if c not in scenario.obstacles)
            for n, s in zip(counts, sites)
        ):
            break
    victims: list[Victim] = []
    vid = 0
    for n, site in zip(counts, sites):
        free = [c for c in site.cells() if c not in scenario.obstacles]
        chosen = rng.choice(len(free), size=n, replace=False)
        for idx in sorted(int(i) for i in chosen):
            health = float(rng.uniform(scenario.health_min, scenario.health_max))
            victims.append(Victim(vid, free[idx], health))
            vid += 1
    return WorldState(clock=0, agents=agents, victims=victims)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def _check_move(body: AgentBody, dest: tuple[int, int], scenario: ScenarioConfig) -> None:
    x, y = dest
    if not (0 <= x < scenario.width and 0 <= y < scenario.height):
        raise ValueError(f"agent {body.agent_id}: move target {dest} outside the grid")
    dx, dy = abs(x - body.pos[0]), abs(y - body.pos[1])
    if body.kind == UGV:
        if dx + dy > scenario.ugv_speed:
            raise ValueError(f"agent {body.agent_id}: ground move {body.pos}->{dest} too far")
        if dest in scenario.obstacles:
            raise ValueError(f"agent {body.agent_id}: move into obstacle {dest}")
    else:
        if max(dx, dy) > scenario.uav_speed:
            raise ValueError(f"agent {body.agent_id}: air move {body.pos}->{dest} too far")


def simulate_primitive_step(
    world: WorldState,
    scenario: ScenarioConfig,
    actions: dict[int, PrimitiveAction],
    rng: np.random.Generator,
) -> list[tuple[int, float]]:
    """Apply one joint primitive action, decay health, and collect rewards.

    Returns the reward events of this step as ``(step, value)`` pairs.
    Illegal actions (pick-up or drop-off by an air vehicle, moves beyond
    an agent's speed, moves into obstacles) raise ``ValueError``.
    """
    step = world.clock
    events: list[tuple[int, float]] = []
    victims = {v.victim_id: v for v in world.victims}
    for body in world.agents:
        action = actions.get(body.agent_id, do_nothing())
        if action.kind == "noop":
            continue
        if action.kind == "move":
            _check_move(body, action.target, scenario)
            body.pos = action.target
            if body.carrying is not None:
                victims[body.carrying].pos = action.target
        elif action.kind == "pickup":
            if body.kind != UGV:
                raise ValueError(f"agent {body.agent_id}: only ground vehicles pick up")
            if body.carrying is not None:
                raise ValueError(f"agent {body.agent_id}: already carrying")
            victim = victims[action.target]
            if (
                victim.dead
                or victim.at_muster
                or victim.carried_by is not None
                or victim.pos != body.pos
            ):
                continue  # contested: someone else got the victim this step
            victim.carried_by = body.agent_id
            body.carrying = victim.victim_id
        elif action.kind == "dropoff":
            if body.kind != UGV:
                raise ValueError(f"agent {body.agent_id}: only ground vehicles drop off")
            if body.carrying is None:
                raise ValueError(f"agent {body.agent_id}: nothing to drop")
            victim = victims[body.carrying]
            victim.carried_by = None
            body.carrying = None
            if scenario.site_at(body.pos) == MUSTER_SITE and not victim.dead:
                victim.at_muster = True
                victim.health = 1.0
                events.append((step, 1.0))
        else:
            raise ValueError(f"unknown primitive action {action.kind!r}")
    # linear health decay; delivered victims no longer degrade
    for victim in world.victims:
        if victim.resolved:
            continue
        victim.health -= scenario.decay_rate
        if victim.health <= DEATH_EPS:
            victim.health = 0.0
            victim.dead = True
            if victim.carried_by is not None:
                world.agents[victim.carried_by].carrying = None
                victim.carried_by = None
            events.append((step, -1.0))
    world.clock += 1
    return events
