"""Scenario definition for the search-and-rescue grid world.

A scenario is a rectangular grid with ``s`` rectangular sites (site 1 is
the muster, where delivered victims are healed), a set of single-cell
obstacles, a roster of ground (UGV) and air (UAV) vehicles, and the victim
population parameters. Sites, speeds, communication ranges, and noise
probabilities are all plain data so that a scenario round-trips through a
JSON file; the SHA-256 of the canonical JSON is the scenario digest that
gets stamped into every generated episode.

Macro-action indexing per agent: index ``j`` in ``[0, s)`` navigates to
site ``j + 1``; index ``s`` is the pick-up macro (ground vehicles only).
Ground vehicles therefore have ``s + 1`` macro-actions, air vehicles ``s``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterator

from ..errors import DataFormatError
from ..fsc import AgentSpec

UGV = "ugv"
UAV = "uav"

MUSTER_SITE = 1


@dataclass(frozen=True)
class Site:
    site_id: int
    x: int
    y: int
    w: int
    h: int

    def contains(self, pos: tuple[int, int]) -> bool:
        return self.x <= pos[0] < self.x + self.w and self.y <= pos[1] < self.y + self.h

    def cells(self) -> Iterator[tuple[int, int]]:
        for cy in range(self.y, self.y + self.h):
            for cx in range(self.x, self.x + self.w):
                yield (cx, cy)

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class AgentDef:
    agent_id: int
    kind: str  # "ugv" | "uav"

    def __post_init__(self):
        if self.kind not in (UGV, UAV):
            raise ValueError(f"unknown agent kind {self.kind!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    width: int = 20
    height: int = 10
    sites: tuple[Site, ...] = ()
    victims: int = 6
    health_min: float = 0.3
    health_max: float = 1.0
    decay_rate: float = 0.002
    critical_health: float = 1.0 / 3.0
    obstacles: frozenset = frozenset()
    agents: tuple[AgentDef, ...] = ()
    ugv_speed: int = 1
    uav_speed: int = 5
    comm_range_ugv: int = 3
    comm_range_uav: int = 6
    obs_noise_prob: float = 0.05
    comm_fail_prob: float = 0.05
    max_steps: int = 500

    def __post_init__(self):
        if not self.sites:
            raise ValueError("scenario needs at least a muster site")
        ids = [s.site_id for s in self.sites]
        if ids != list(range(1, len(self.sites) + 1)):
            raise ValueError("site ids must be 1..s in order")
        cells_seen: set[tuple[int, int]] = set()
        for s in self.sites:
            if s.area < 1:
                raise ValueError(f"site {s.site_id} is empty")
            for c in s.cells():
                if not (0 <= c[0] < self.width and 0 <= c[1] < self.height):
                    raise ValueError(f"site {s.site_id} extends outside the grid")
                if c in cells_seen:
                    raise ValueError(f"site {s.site_id} overlaps another site")
                cells_seen.add(c)
        for p in (self.obs_noise_prob, self.comm_fail_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if not self.agents:
            raise ValueError("scenario needs at least one agent")
        if [a.agent_id for a in self.agents] != list(range(len(self.agents))):
            raise ValueError("agent ids must be 0..n-1 in order")
        free_capacity = sum(
            1
            for s in self.victim_sites
            for c in s.cells()
            if c not in self.obstacles
        )
        if self.victims > free_capacity:
            raise ValueError(f"{self.victims} victims exceed site capacity {free_capacity}")
        if self.victims and not self.victim_sites:
            raise ValueError("victims configured but no victim sites exist")

    # -- derived quantities -------------------------------------------------

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def muster(self) -> Site:
        return self.sites[0]

    @property
    def victim_sites(self) -> tuple[Site, ...]:
        return self.sites[1:]

    @property
    def n_observations(self) -> int:
        # five-field macro-observation over (2, s, 3, s, 3)
        return 18 * self.n_sites * self.n_sites

    def n_actions(self, kind: str) -> int:
        return self.n_sites + 1 if kind == UGV else self.n_sites

    @property
    def pickup_macro(self) -> int:
        return self.n_sites

    def site_at(self, pos: tuple[int, int]) -> int | None:
        for s in self.sites:
            if s.contains(pos):
                return s.site_id
        return None

    def agent_specs(self, node_count: int) -> dict[int, AgentSpec]:
        return {
            a.agent_id: AgentSpec(
                agent_id=a.agent_id,
                n_actions=self.n_actions(a.kind),
                n_obs=self.n_observations,
                n_nodes=node_count,
            )
            for a in self.agents
        }


# ---------------------------------------------------------------------------
# built-in layouts
# ---------------------------------------------------------------------------

def default_scenario(**overrides) -> ScenarioConfig:
    """The full 20x10 layout: muster plus five victim sites, 6 victims,
    1 air and 3 ground vehicles, scattered single-cell obstacles."""
    base = dict(
        width=20,
        height=10,
        sites=(
            Site(1, 0, 3, 3, 4),    # muster
            Site(2, 6, 0, 3, 3),
            Site(3, 6, 7, 3, 3),
            Site(4, 12, 1, 3, 3),
            Site(5, 12, 6, 3, 3),
            Site(6, 17, 3, 3, 4),
        ),
        victims=6,
        obstacles=frozenset({(4, 2), (4, 8), (10, 5), (11, 2), (11, 8), (16, 1), (16, 8)}),
        agents=(AgentDef(0, UAV), AgentDef(1, UGV), AgentDef(2, UGV), AgentDef(3, UGV)),
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def mini_scenario(**overrides) -> ScenarioConfig:
    """Desk-scale variant: 12x8 grid, muster plus two victim sites,
    3 victims, two ground vehicles, no obstacles.

    Victims start weaker and decay faster than in the full layout so that
    policy quality shows up in the returns: a prompt rescuer saves most
    victims, an aimless one loses most. The roster is two ground vehicles
    (no air vehicle) to keep both agents' decision cadences comparable;
    an air vehicle re-decides nearly every step at this map size, which
    makes logged decision prefixes needlessly long for training.
    """
    base = dict(
        width=10,
        height=6,
        sites=(
            Site(1, 0, 2, 2, 2),    # muster
            Site(2, 4, 0, 3, 3),
            Site(3, 7, 3, 3, 3),
        ),
        victims=3,
        health_min=0.25,
        health_max=0.75,
        decay_rate=0.012,
        obstacles=frozenset(),
        agents=(AgentDef(0, UGV), AgentDef(1, UGV)),
        max_steps=120,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


BUILTIN_SCENARIOS = {"default": default_scenario, "mini": mini_scenario}


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "width": cfg.width,
        "height": cfg.height,
        "sites": [{"id": s.site_id, "x": s.x, "y": s.y, "w": s.w, "h": s.h} for s in cfg.sites],
        "victims": cfg.victims,
        "health_min": cfg.health_min,
        "health_max": cfg.health_max,
        "decay_rate": cfg.decay_rate,
        "critical_health": cfg.critical_health,
        "obstacles": sorted([list(c) for c in cfg.obstacles]),
        "agents": [{"id": a.agent_id, "kind": a.kind} for a in cfg.agents],
        "ugv_speed": cfg.ugv_speed,
        "uav_speed": cfg.uav_speed,
        "comm_range_ugv": cfg.comm_range_ugv,
        "comm_range_uav": cfg.comm_range_uav,
        "obs_noise_prob": cfg.obs_noise_prob,
        "comm_fail_prob": cfg.comm_fail_prob,
        "max_steps": cfg.max_steps,
    }


def scenario_from_dict(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig(
            width=int(data["width"]),
            height=int(data["height"]),
            sites=tuple(
                Site(int(s["id"]), int(s["x"]), int(s["y"]), int(s["w"]), int(s["h"]))
                for s in data["sites"]
            ),
            victims=int(data["victims"]),
            health_min=float(data["health_min"]),
            health_max=float(data["health_max"]),
            decay_rate=float(data["decay_rate"]),
            critical_health=float(data["critical_health"]),
            obstacles=frozenset((int(c[0]), int(c[1])) for c in data["obstacles"]),
            agents=tuple(AgentDef(int(a["id"]), str(a["kind"])) for a in data["agents"]),
            ugv_speed=int(data["ugv_speed"]),
            uav_speed=int(data["uav_speed"]),
            comm_range_ugv=int(data["comm_range_ugv"]),
            comm_range_uav=int(data["comm_range_uav"]),
            obs_noise_prob=float(data["obs_noise_prob"]),
            comm_fail_prob=float(data["comm_fail_prob"]),
            max_steps=int(data["max_steps"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed scenario: {exc}") from exc


def save_scenario(cfg: ScenarioConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(source: str) -> ScenarioConfig:
    """Load a scenario from a JSON file path or a builtin name."""
    if source in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[source]()
    with open(source, "r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def scenario_digest(cfg: ScenarioConfig) -> str:
    """SHA-256 of the canonical JSON form (independent of file formatting)."""
    canon = json.dumps(scenario_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
