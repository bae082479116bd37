"""Macro-action controllers: initiation, termination, and primitive policies.

Macro index ``j`` in ``[0, s)`` navigates to site ``j + 1`` and terminates
once the agent is inside it; arriving at the muster while carrying a
victim drops the victim off automatically before terminating. Macro ``s``
(ground vehicles only) walks to the neediest victim at the agent's current
site and picks it up on co-location, terminating early if no victim there
needs help anymore.

Navigation is greedy toward the target cell. When a ground vehicle's
greedy step is blocked it follows the obstruction's perimeter keeping it
on the right-hand side, leaving the wall once it is closer to the target
than where it attached and the direct step is free again. If eight
consecutive wall steps bring no progress the vehicle perturbs its path by
one step in a random free direction. Air vehicles ignore obstacles and
take up to ``uav_speed`` diagonal-capable unit moves per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import MacroNotInitiable
from .scenario import MUSTER_SITE, UAV, UGV, ScenarioConfig, Site
from .world import (
    AgentBody,
    PrimitiveAction,
    WorldState,
    do_nothing,
    drop_off,
    move,
    pick_up,
)

STUCK_LIMIT = 8

_DIRS = ((0, 1), (1, 0), (0, -1), (-1, 0))  # N E S W


def initiable_macros(body: AgentBody, world: WorldState, scenario: ScenarioConfig) -> list[int]:
    """Macros whose initiation predicate holds for this agent right now.

    Navigation macros are always available. Pick-up requires a ground
    vehicle standing inside a victim site with its hands free.
    """
    macros = list(range(scenario.n_sites))
    if body.kind == UGV:
        site = scenario.site_at(body.pos)
        if site is not None and site != MUSTER_SITE and body.carrying is None:
            macros.append(scenario.pickup_macro)
    return macros


def nearest_cell(site: Site, pos: tuple[int, int]) -> tuple[int, int]:
    """The site cell closest to ``pos`` (Manhattan; ties by lowest x, then y)."""
    x = min(max(pos[0], site.x), site.x + site.w - 1)
    y = min(max(pos[1], site.y), site.y + site.h - 1)
    return (x, y)


# ---------------------------------------------------------------------------
# navigation
# ---------------------------------------------------------------------------

@dataclass
class NavState:
    wall_heading: tuple[int, int] | None = None  # None = direct mode
    attach_dist: int = 0
    stuck: int = 0
    best_dist: int = 0


def _free(cell: tuple[int, int], scenario: ScenarioConfig) -> bool:
    x, y = cell
    return 0 <= x < scenario.width and 0 <= y < scenario.height and cell not in scenario.obstacles


def _add(pos, d):
    return (pos[0] + d[0], pos[1] + d[1])


def _manhattan(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _greedy_dirs(pos, target):
    dx, dy = target[0] - pos[0], target[1] - pos[1]
    along_x = (1 if dx > 0 else -1, 0)
    along_y = (0, 1 if dy > 0 else -1)
    if dx == 0:
        return [along_y]
    if dy == 0:
        return [along_x]
    return [along_x, along_y] if abs(dx) >= abs(dy) else [along_y, along_x]


def _rot_right(d):
    return (d[1], -d[0])


def _rot_left(d):
    return (-d[1], d[0])


def ugv_nav_step(
    pos: tuple[int, int],
    target: tuple[int, int],
    scenario: ScenarioConfig,
    nav: NavState,
    rng: np.random.Generator,
) -> tuple[int, int]:
    """Next cell for a ground vehicle heading to ``target``."""
    if pos == target:
        return pos
    dist = _manhattan(pos, target)
    if nav.wall_heading is not None:
        # leave the wall once past the attachment point and the way is clear
        greedy = _greedy_dirs(pos, target)
        if dist < nav.attach_dist and _free(_add(pos, greedy[0]), scenario):
            nav.wall_heading = None
        else:
            heading = nav.wall_heading
            for cand in (_rot_right(heading), heading, _rot_left(heading), (-heading[0], -heading[1])):
                if _free(_add(pos, cand), scenario):
                    nxt = _add(pos, cand)
                    nav.wall_heading = cand
                    if _manhattan(nxt, target) < nav.best_dist:
                        nav.best_dist = _manhattan(nxt, target)
                        nav.stuck = 0
                    else:
                        nav.stuck += 1
                        if nav.stuck > STUCK_LIMIT:
                            nav.wall_heading = None
                            nav.stuck = 0
                            free_dirs = [d for d in _DIRS if _free(_add(pos, d), scenario)]
                            if free_dirs:
                                return _add(pos, free_dirs[int(rng.integers(len(free_dirs)))])
                    return nxt
            return pos  # boxed in on all four sides
    for d in _greedy_dirs(pos, target):
        if _free(_add(pos, d), scenario):
            return _add(pos, d)
    # blocked: attach to the wall, turning left from the blocked direction
    blocked = _greedy_dirs(pos, target)[0]
    heading = _rot_left(blocked)
    for _ in range(4):
        if _free(_add(pos, heading), scenario):
            break
        heading = _rot_left(heading)
    else:
        return pos
    nav.wall_heading = heading
    nav.attach_dist = dist
    nav.best_dist = dist
    nav.stuck = 0
    return _add(pos, heading)


def uav_nav_step(
    pos: tuple[int, int], target: tuple[int, int], scenario: ScenarioConfig
) -> tuple[int, int]:
    """Destination after up to ``uav_speed`` straight-line unit moves."""
    x, y = pos
    for _ in range(scenario.uav_speed):
        if (x, y) == target:
            break
        x += (target[0] > x) - (target[0] < x)
        y += (target[1] > y) - (target[1] < y)
    return (x, y)


# ---------------------------------------------------------------------------
# macro execution
# ---------------------------------------------------------------------------

@dataclass
class MacroRun:
    """Execution state of one selected macro-action."""

    macro: int
    site_id: int | None = None   # navigation target or pick-up site
    nav: NavState | None = None

    def __post_init__(self):
        if self.nav is None:
            self.nav = NavState()


def start_macro(
    macro: int, body: AgentBody, world: WorldState, scenario: ScenarioConfig
) -> MacroRun:
    if macro not in initiable_macros(body, world, scenario):
        raise MacroNotInitiable(f"agent {body.agent_id}: macro {macro} not initiable")
    if macro == scenario.pickup_macro:
        return MacroRun(macro, site_id=scenario.site_at(body.pos))
    return MacroRun(macro, site_id=macro + 1)


def _pickup_candidates(run: MacroRun, body: AgentBody, world: WorldState, scenario: ScenarioConfig):
    return [
        v
        for v in world.victims
        if not v.dead and not v.at_muster and v.carried_by is None
        and scenario.site_at(v.pos) == run.site_id
    ]


def macro_terminated(
    run: MacroRun, body: AgentBody, world: WorldState, scenario: ScenarioConfig
) -> bool:
    """Whether the macro's termination condition holds in this world state."""
    if run.macro == scenario.pickup_macro:
        if body.carrying is not None:
            return True
        return not _pickup_candidates(run, body, world, scenario)
    inside = scenario.site_at(body.pos) == run.site_id
    if run.site_id == MUSTER_SITE and body.carrying is not None:
        return False  # still has to drop off
    return inside


def macro_step_action(
    run: MacroRun,
    body: AgentBody,
    world: WorldState,
    scenario: ScenarioConfig,
    rng: np.random.Generator,
) -> PrimitiveAction:
    """The primitive action this macro emits for the current step."""
    if run.macro == scenario.pickup_macro:
        candidates = _pickup_candidates(run, body, world, scenario)
        if not candidates:
            return do_nothing()
        target = min(candidates, key=lambda v: (v.health, v.victim_id))
        if target.pos == body.pos:
            return pick_up(target.victim_id)
        return move(ugv_nav_step(body.pos, target.pos, scenario, run.nav, rng))
    site = scenario.sites[run.site_id - 1]
    if site.contains(body.pos):
        if run.site_id == MUSTER_SITE and body.carrying is not None:
            return drop_off()
        return do_nothing()
    target = nearest_cell(site, body.pos)
    if body.kind == UAV:
        return move(uav_nav_step(body.pos, target, scenario))
    return move(ugv_nav_step(body.pos, target, scenario, run.nav, rng))
