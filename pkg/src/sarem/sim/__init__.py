"""Time-stepped grid-world search-and-rescue simulator."""

from .engine import (
    Decider,
    FscDecider,
    GreedyDecider,
    RolloutResult,
    UniformDecider,
    episode_returns,
    rollout_evaluate,
    run_episode,
)
from .observe import (
    ObservationVector,
    build_observation,
    decode_observation,
    encode_observation,
    observe_and_communicate,
)
from .scenario import (
    BUILTIN_SCENARIOS,
    MUSTER_SITE,
    UAV,
    UGV,
    AgentDef,
    ScenarioConfig,
    Site,
    default_scenario,
    load_scenario,
    mini_scenario,
    save_scenario,
    scenario_digest,
)
from .world import PrimitiveAction, WorldState, init_world, simulate_primitive_step

__all__ = [
    "Decider",
    "FscDecider",
    "GreedyDecider",
    "RolloutResult",
    "UniformDecider",
    "episode_returns",
    "rollout_evaluate",
    "run_episode",
    "ObservationVector",
    "build_observation",
    "decode_observation",
    "encode_observation",
    "observe_and_communicate",
    "BUILTIN_SCENARIOS",
    "MUSTER_SITE",
    "UAV",
    "UGV",
    "AgentDef",
    "ScenarioConfig",
    "Site",
    "default_scenario",
    "load_scenario",
    "mini_scenario",
    "save_scenario",
    "scenario_digest",
    "PrimitiveAction",
    "WorldState",
    "init_world",
    "simulate_primitive_step",
]
