"""Episode data model, serialization, splitting, and off-policy evaluation.

Episodes are stored one JSON object per line (UTF-8). Field names are fixed:

    {"episode_id": 0, "scenario_digest": "…", "length_steps": 412,
     "agents": [{"agent_id": 0,
                 "decisions": [{"t": 0, "obs": null, "ma": 3, "p_behavior": 0.87}, …]}, …],
     "rewards": [{"t": 57, "r": 1}, …]}

``t`` is the primitive simulator step at which a macro decision started (or
at which a reward event occurred), ``obs`` the encoded macro-observation
(``null`` on the first decision, which is taken before any observation),
``ma`` the macro-action index, and ``p_behavior`` the behavior policy's
probability of that macro — strictly positive by construction.
"""

from __future__ import annotations

import hashlib
import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .errors import DataFormatError, InsufficientDataError
from .fsc import JointPolicy, sequence_loglik


@dataclass(frozen=True)
class AgentDecision:
    start_step: int
    obs: int | None  # None on the first decision of an episode
    action: int
    behavior_prob: float


@dataclass(frozen=True)
class AgentTrack:
    agent_id: int
    decisions: tuple[AgentDecision, ...]


@dataclass(frozen=True)
class Episode:
    episode_id: int
    scenario_digest: str
    length_steps: int
    agents: tuple[AgentTrack, ...]
    rewards: tuple[tuple[int, float], ...]  # (step, value), sorted by step


@dataclass(frozen=True)
class LearnConfig:
    """Evaluation/training knobs shared by the estimator and the trainer.

    ``gamma`` discounts per primitive simulator step. ``time_indexing``
    selects what the discount exponent counts: ``"primitive"`` (default)
    uses the reward's primitive step; ``"epoch"`` uses the index of the
    team's latest decision round at or before the reward, kept only for
    comparison experiments. ``r_min`` overrides the reward shift used by
    the trainer; ``None`` takes the minimum reward value present in the
    training data.
    """

    gamma: float = 0.999
    r_min: float | None = None
    time_indexing: str = "primitive"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.time_indexing not in ("primitive", "epoch"):
            raise ValueError(f"unknown time_indexing {self.time_indexing!r}")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _episode_to_record(ep: Episode) -> dict:
    return {
        "episode_id": ep.episode_id,
        "scenario_digest": ep.scenario_digest,
        "length_steps": ep.length_steps,
        "agents": [
            {
                "agent_id": tr.agent_id,
                "decisions": [
                    {"t": d.start_step, "obs": d.obs, "ma": d.action, "p_behavior": d.behavior_prob}
                    for d in tr.decisions
                ],
            }
            for tr in ep.agents
        ],
        "rewards": [{"t": t, "r": r} for t, r in ep.rewards],
    }


def write_episodes(episodes: Sequence[Episode], dest: str | IO[str]) -> None:
    own = isinstance(dest, str)
    fh = open(dest, "w", encoding="utf-8") if own else dest
    try:
        for ep in episodes:
            fh.write(json.dumps(_episode_to_record(ep)) + "\n")
    finally:
        if own:
            fh.close()


def _parse_episode(rec: dict) -> Episode:
    tracks = []
    for agent in rec["agents"]:
        decisions = []
        prev_step = -1
        for i, d in enumerate(agent["decisions"]):
            dec = AgentDecision(
                start_step=int(d["t"]),
                obs=None if d["obs"] is None else int(d["obs"]),
                action=int(d["ma"]),
                behavior_prob=float(d["p_behavior"]),
            )
            if dec.behavior_prob <= 0.0:
                raise ValueError(f"agent {agent['agent_id']} decision {i}: p_behavior <= 0")
            if i == 0:
                if dec.start_step != 0:
                    raise ValueError(f"agent {agent['agent_id']}: first decision not at step 0")
                if dec.obs is not None:
                    raise ValueError(f"agent {agent['agent_id']}: first decision carries an observation")
            else:
                if dec.obs is None:
                    raise ValueError(f"agent {agent['agent_id']} decision {i}: missing observation")
                if dec.start_step < prev_step:
                    raise ValueError(f"agent {agent['agent_id']} decision {i}: start steps decrease")
            prev_step = dec.start_step
            decisions.append(dec)
        tracks.append(AgentTrack(agent_id=int(agent["agent_id"]), decisions=tuple(decisions)))
    rewards = tuple((int(e["t"]), float(e["r"])) for e in rec["rewards"])
    if any(rewards[i][0] > rewards[i + 1][0] for i in range(len(rewards) - 1)):
        raise ValueError("reward events not sorted by step")
    return Episode(
        episode_id=int(rec["episode_id"]),
        scenario_digest=str(rec["scenario_digest"]),
        length_steps=int(rec["length_steps"]),
        agents=tuple(tracks),
        rewards=rewards,
    )


def read_episodes(src: str | IO[str]) -> list[Episode]:
    own = isinstance(src, str)
    fh = open(src, "r", encoding="utf-8") if own else src
    episodes: list[Episode] = []
    try:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                episodes.append(_parse_episode(json.loads(line)))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from exc
    finally:
        if own:
            fh.close()
    return episodes


def dataset_digest(path: str) -> str:
    """SHA-256 of a dataset file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_dataset(
    episodes: Sequence[Episode], eval_fraction: float, rng: np.random.Generator
) -> tuple[list[Episode], list[Episode]]:
    """Random disjoint train/eval partition.

    The evaluation share is ``floor(eval_fraction * len + 0.5)`` episodes
    (round half up). Deterministic for a fixed stream; original episode
    order is preserved inside each part.
    """
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    if len(episodes) < 2:
        raise InsufficientDataError(f"need at least 2 episodes to split, got {len(episodes)}")
    n_eval = int(math.floor(eval_fraction * len(episodes) + 0.5))
    perm = rng.permutation(len(episodes))
    eval_idx = set(int(i) for i in perm[:n_eval])
    train = [ep for i, ep in enumerate(episodes) if i not in eval_idx]
    evals = [ep for i, ep in enumerate(episodes) if i in eval_idx]
    return train, evals


# ---------------------------------------------------------------------------
# off-policy evaluation
# ---------------------------------------------------------------------------

def _discount_exponent(ep: Episode, step: int, time_indexing: str) -> int:
    if time_indexing == "primitive":
        return step
    # epoch mode: index of the team's latest decision round at or before step
    return max(
        bisect_right([d.start_step for d in tr.decisions], step) - 1 for tr in ep.agents
    )


def _episode_value(
    ep: Episode, policy: JointPolicy | None, cfg: LearnConfig
) -> float:
    if not ep.rewards:
        return 0.0
    # per-agent prefix log-likelihood ratios under the target policy;
    # policy=None means "evaluate the behavior policy itself" (ratios 1)
    ratios = []
    for tr in ep.agents:
        if any(d.behavior_prob <= 0.0 for d in tr.decisions):
            raise ValueError(
                f"episode {ep.episode_id}, agent {tr.agent_id}: non-positive behavior probability"
            )
        starts = [d.start_step for d in tr.decisions]
        log_b = np.cumsum([math.log(d.behavior_prob) for d in tr.decisions])
        if policy is None:
            log_p = log_b
        else:
            if tr.agent_id not in policy:
                raise ValueError(f"episode {ep.episode_id}: agent {tr.agent_id} missing from policy")
            params = policy[tr.agent_id]
            actions = [d.action for d in tr.decisions]
            observations = [d.obs for d in tr.decisions[1:]]
            log_p = sequence_loglik(params, actions, observations)
        ratios.append((starts, log_p - log_b))
    log_gamma = math.log(cfg.gamma) if cfg.gamma > 0 else -math.inf
    terms = []
    for step, r in ep.rewards:
        log_w = 0.0
        for starts, log_ratio in ratios:
            # decisions started at or before the reward's step
            c = bisect_right(starts, step)
            log_w += float(log_ratio[c - 1])
        exponent = _discount_exponent(ep, step, cfg.time_indexing)
        log_disc = exponent * log_gamma if exponent else 0.0
        terms.append(r * math.exp(log_disc + log_w))
    return math.fsum(terms)


def empirical_value(
    episodes: Sequence[Episode], policy: JointPolicy | None, cfg: LearnConfig
) -> float:
    """Importance-weighted empirical value of ``policy`` on logged episodes.

    Each reward event is discounted at its primitive step and weighted by
    the product, over agents, of the target/behavior probability ratio of
    every decision started at or before that step. ``policy=None``
    evaluates the behavior policy itself (all ratios one). Weight products
    are formed in the log domain; the cross-episode mean uses exact
    compensated summation, so the result is independent of episode order.
    """
    if not episodes:
        raise InsufficientDataError("cannot evaluate on an empty dataset")
    return math.fsum(_episode_value(ep, policy, cfg) for ep in episodes) / len(episodes)


def behavior_value(episodes: Sequence[Episode], cfg: LearnConfig) -> float:
    """Mean discounted return of the logged episodes under their own policy."""
    return empirical_value(episodes, None, cfg)


def min_reward(episodes: Sequence[Episode]) -> float:
    """Minimum reward value present in the data (0.0 if there are no events)."""
    values = [r for ep in episodes for _, r in ep.rewards]
    return min(values) if values else 0.0
