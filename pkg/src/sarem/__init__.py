"""Decentralized macro-action controller learning from batch trajectories.

The package pairs a batch EM trainer (with a concurrent random-restart
wrapper) for stochastic Mealy finite-state controllers with the grid-world
search-and-rescue simulator used to generate trajectory data and evaluate
learned policies.
"""

__version__ = "0.1.0"

from .dataset import (
    AgentDecision,
    AgentTrack,
    Episode,
    LearnConfig,
    behavior_value,
    empirical_value,
    read_episodes,
    split_dataset,
    write_episodes,
)
from .fsc import (
    AgentSpec,
    FscParams,
    FscRuntimeState,
    fsc_step,
    init_dirichlet,
    init_joint,
    read_policy,
    sequence_likelihood,
    sequence_loglik,
    write_policy,
)
from .isem import IsemConfig, IsemState, isem_train
from .poem import EStepBuffers, TrainStats, e_step, m_step, node_posteriors, poem_train

__all__ = [
    "__version__",
    "AgentDecision",
    "AgentTrack",
    "Episode",
    "LearnConfig",
    "behavior_value",
    "empirical_value",
    "read_episodes",
    "split_dataset",
    "write_episodes",
    "AgentSpec",
    "FscParams",
    "FscRuntimeState",
    "fsc_step",
    "init_dirichlet",
    "init_joint",
    "read_policy",
    "sequence_likelihood",
    "sequence_loglik",
    "write_policy",
    "IsemConfig",
    "IsemState",
    "isem_train",
    "EStepBuffers",
    "TrainStats",
    "e_step",
    "m_step",
    "node_posteriors",
    "poem_train",
]
