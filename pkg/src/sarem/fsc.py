"""Stochastic Mealy finite-state controllers for individual agents.

A controller holds four row-stochastic tables:

==========  =========  ====================================================
field       shape      meaning
==========  =========  ====================================================
``start``   (Q,)       distribution of the node active at the first decision
``emit0``   (Q, M)     output law of the first decision (no observation yet)
``emit``    (Q, O, M)  output law of every later decision
``trans``   (Q, O, Q)  node transition law
==========  =========  ====================================================

The first macro decision of an episode is taken before any observation: the
node is drawn from ``start`` and the action from ``emit0``. Every later
decision receives an observation ``o``, first moves the node with
``trans[q, o, :]`` and then emits an action from the new node with
``emit[q', o, :]``. Action likelihoods, posterior computations, and runtime
stepping all share this one factorization.

In the policy file format the four tables are stored under the fixed field
names ``mu``, ``lambda0``, ``lambda`` and ``delta`` (see ``write_policy``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .errors import DataFormatError
from .rng import sample_index

ROW_SUM_TOL = 1e-9       # internal row-stochasticity tolerance
FILE_ROW_SUM_TOL = 1e-6  # tolerance accepted when reading policy files


@dataclass(frozen=True)
class AgentSpec:
    """Alphabet sizes of one agent's controller."""

    agent_id: int
    n_actions: int
    n_obs: int
    n_nodes: int

    def __post_init__(self):
        for name in ("n_actions", "n_obs", "n_nodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    def with_nodes(self, n_nodes: int) -> "AgentSpec":
        return AgentSpec(self.agent_id, self.n_actions, self.n_obs, n_nodes)


def _check_rows(name: str, arr: np.ndarray, tol: float) -> None:
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"{name} rows off the simplex by {worst:.3e} (tol {tol:g})")


@dataclass(frozen=True)
class FscParams:
    """One agent's controller parameters. Immutable after construction."""

    spec: AgentSpec
    start: np.ndarray
    emit0: np.ndarray
    emit: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        q, m, o = self.spec.n_nodes, self.spec.n_actions, self.spec.n_obs
        expected = {
            "start": (q,),
            "emit0": (q, m),
            "emit": (q, o, m),
            "trans": (q, o, q),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            _check_rows(name, arr, ROW_SUM_TOL)
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def strictly_positive(self) -> bool:
        return all(
            float(getattr(self, n).min()) > 0.0
            for n in ("start", "emit0", "emit", "trans")
        )


@dataclass
class FscRuntimeState:
    """Mutable per-episode execution state of one controller."""

    current_node: int = 0
    steps_taken: int = 0


JointPolicy = dict[int, FscParams]  # agent_id -> controller


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _dirichlet_rows(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    # Flat Dirichlet via normalized unit exponentials, so any implementation
    # with the same generator reproduces the stream draw-for-draw.
    draws = rng.standard_exponential(shape)
    return draws / draws.sum(axis=-1, keepdims=True)


def init_dirichlet(spec: AgentSpec, rng: np.random.Generator) -> FscParams:
    """Sample every parameter row from the flat Dirichlet over its simplex."""
    q, m, o = spec.n_nodes, spec.n_actions, spec.n_obs
    return FscParams(
        spec=spec,
        start=_dirichlet_rows(rng, (q,)),
        emit0=_dirichlet_rows(rng, (q, m)),
        emit=_dirichlet_rows(rng, (q, o, m)),
        trans=_dirichlet_rows(rng, (q, o, q)),
    )


def init_joint(specs: Iterable[AgentSpec], rng: np.random.Generator) -> JointPolicy:
    """Sample controllers for a whole team, in ascending agent-id order."""
    return {s.agent_id: init_dirichlet(s, rng) for s in sorted(specs, key=lambda s: s.agent_id)}


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def fsc_step(
    params: FscParams,
    state: FscRuntimeState,
    obs: int | None,
    rng: np.random.Generator,
) -> tuple[int, FscRuntimeState, float]:
    """Advance the controller by one decision.

    The first decision of an episode ignores ``obs`` (the node comes from
    ``start``, the action from ``emit0``). Later decisions require a valid
    observation index. Returns the sampled action, the successor runtime
    state, and the action's probability under the applicable output law.
    """
    if state.steps_taken == 0:
        node = sample_index(rng, params.start)
        action = sample_index(rng, params.emit0[node])
        prob = float(params.emit0[node, action])
    else:
        if obs is None or not 0 <= obs < params.spec.n_obs:
            raise ValueError(f"observation {obs!r} outside [0, {params.spec.n_obs})")
        node = sample_index(rng, params.trans[state.current_node, obs])
        action = sample_index(rng, params.emit[node, obs])
        prob = float(params.emit[node, obs, action])
    return action, FscRuntimeState(node, state.steps_taken + 1), prob


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------

def _validate_sequences(params: FscParams, actions, observations) -> tuple[np.ndarray, np.ndarray]:
    actions = np.asarray(actions, dtype=np.int64)
    observations = np.asarray(observations, dtype=np.int64)
    if actions.size == 0:
        raise ValueError("empty action sequence")
    if observations.size != actions.size - 1:
        raise ValueError(
            f"need len(observations) == len(actions) - 1, got {observations.size} and {actions.size}"
        )
    if actions.min() < 0 or actions.max() >= params.spec.n_actions:
        raise ValueError("action index out of range")
    if observations.size and (observations.min() < 0 or observations.max() >= params.spec.n_obs):
        raise ValueError("observation index out of range")
    return actions, observations


def forward_messages(
    params: FscParams, actions, observations
) -> tuple[np.ndarray, np.ndarray]:
    """Scaled forward pass over the node trellis.

    Returns ``(alpha, log_c)`` where ``alpha[t]`` is the node filter
    p(q_t | m_{0:t}, o_{1:t}) and ``log_c[t]`` the log of step t's
    normalizer; the prefix log-likelihood is ``log_c[:t+1].sum()``.
    """
    actions, observations = _validate_sequences(params, actions, observations)
    n = actions.size
    q = params.spec.n_nodes
    alpha = np.empty((n, q))
    log_c = np.empty(n)
    a = params.start * params.emit0[:, actions[0]]
    c = a.sum()
    alpha[0] = a / c
    log_c[0] = np.log(c)
    for t in range(1, n):
        o, m = observations[t - 1], actions[t]
        a = (alpha[t - 1] @ params.trans[:, o, :]) * params.emit[:, o, m]
        c = a.sum()
        alpha[t] = a / c
        log_c[t] = np.log(c)
    return alpha, log_c


def sequence_loglik(params: FscParams, actions, observations) -> np.ndarray:
    """Log prefix likelihoods ln p(m_{0:t} | o_{1:t}) for t = 0..T."""
    _, log_c = forward_messages(params, actions, observations)
    return np.cumsum(log_c)


def sequence_likelihood(params: FscParams, actions, observations) -> np.ndarray:
    """Prefix likelihoods p(m_{0:t} | o_{1:t}); values in (0, 1], length T+1."""
    return np.exp(sequence_loglik(params, actions, observations))


# ---------------------------------------------------------------------------
# policy files (one JSON object per agent per line)
# ---------------------------------------------------------------------------

def _params_to_record(p: FscParams) -> dict:
    return {
        "spec": {
            "agent_id": p.spec.agent_id,
            "actions": p.spec.n_actions,
            "observations": p.spec.n_obs,
            "nodes": p.spec.n_nodes,
        },
        "mu": p.start.tolist(),
        "lambda0": p.emit0.tolist(),
        "lambda": p.emit.tolist(),
        "delta": p.trans.tolist(),
    }


def write_policy(policy: JointPolicy, dest: str | IO[str]) -> None:
    """Write a joint policy, one agent object per line, ascending agent id."""
    own = isinstance(dest, str)
    fh = open(dest, "w", encoding="utf-8") if own else dest
    try:
        for agent_id in sorted(policy):
            fh.write(json.dumps(_params_to_record(policy[agent_id])) + "\n")
    finally:
        if own:
            fh.close()


def _renormalize(arr: np.ndarray) -> np.ndarray:
    return arr / arr.sum(axis=-1, keepdims=True)


def read_policy(src: str | IO[str]) -> JointPolicy:
    """Read a joint policy file written by ``write_policy``.

    Rows off the simplex by more than 1e-6 are rejected; rows within the
    tolerance are renormalized exactly on load.
    """
    own = isinstance(src, str)
    fh = open(src, "r", encoding="utf-8") if own else src
    policy: JointPolicy = {}
    try:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                spec = AgentSpec(
                    agent_id=int(rec["spec"]["agent_id"]),
                    n_actions=int(rec["spec"]["actions"]),
                    n_obs=int(rec["spec"]["observations"]),
                    n_nodes=int(rec["spec"]["nodes"]),
                )
                tables = {
                    "start": np.asarray(rec["mu"], dtype=np.float64),
                    "emit0": np.asarray(rec["lambda0"], dtype=np.float64),
                    "emit": np.asarray(rec["lambda"], dtype=np.float64),
                    "trans": np.asarray(rec["delta"], dtype=np.float64),
                }
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataFormatError(f"line {lineno}: malformed policy record ({exc})") from exc
            for name, arr in tables.items():
                try:
                    _check_rows(name, arr, FILE_ROW_SUM_TOL)
                except ValueError as exc:
                    raise DataFormatError(f"line {lineno}: {exc}") from exc
            try:
                params = FscParams(spec=spec, **{k: _renormalize(v) for k, v in tables.items()})
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from exc
            if spec.agent_id in policy:
                raise DataFormatError(f"line {lineno}: duplicate agent_id {spec.agent_id}")
            policy[spec.agent_id] = params
    finally:
        if own:
            fh.close()
    return policy
