"""Batch EM trainer for macro-action finite-state controllers.

Training maximizes a Jensen lower bound of the log of the shifted empirical
value: each reward event (step tau, value r) in episode k is reweighted to

    rtilde = gamma^tau * (r - r_min) / prod(behavior probs of decisions
                                            started at or before tau)

and contributes, under the current parameters, the weight

    sigma = rtilde * prod_n p(agent n's action prefix | observations).

The E-step runs one scaled forward pass per (episode, agent) and turns the
per-event sigmas into the bound value; the M-step runs scaled backward
passes per reward event, forms sigma-weighted expected counts of node
visits (phi) and node transitions (xi), and renormalizes every parameter
row. Rows that accumulate no mass are copied unchanged; all other rows get
an additive 1e-12 floor before normalization so the result stays strictly
positive. Alternating the two steps never decreases the bound.

Events whose reward equals r_min carry zero weight, so with the default
r_min (the minimum reward present in the training data) only above-minimum
events drive the update.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Episode, LearnConfig, min_reward
from .errors import InsufficientDataError, NumericError
from .fsc import AgentSpec, FscParams, JointPolicy, forward_messages

PROB_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# dataset preparation (index arrays reused across EM iterations)
# ---------------------------------------------------------------------------

@dataclass
class _AgentBatch:
    spec: AgentSpec
    acts: np.ndarray      # (K, Tp) action index per decision, 0-padded
    obs: np.ndarray       # (K, Tp) observation per decision (column 0 unused)
    lengths: np.ndarray   # (K,) decisions per episode
    logb_cum: np.ndarray  # (K, Tp) cumulative log behavior prob


@dataclass
class TrainingData:
    """Batched view of a training set, built once per (dataset, team)."""

    episodes: list[Episode]
    agent_ids: list[int]
    batches: dict[int, _AgentBatch]
    ev_ep: np.ndarray        # (E,) episode row of each reward event
    ev_step: np.ndarray      # (E,) primitive step of the event
    ev_reward: np.ndarray    # (E,)
    ev_tprefix: dict[int, np.ndarray]  # agent_id -> (E,) last decision index <= step
    ev_logb: np.ndarray      # (E,) total behavior log prob of all decisions <= step
    ev_epoch: np.ndarray     # (E,) team decision-round index of the event

    @property
    def n_events(self) -> int:
        return int(self.ev_ep.size)


def prepare_training_data(episodes: Sequence[Episode], specs: dict[int, AgentSpec]) -> TrainingData:
    if not episodes:
        raise InsufficientDataError("training set is empty")
    agent_ids = sorted(specs)
    for ep in episodes:
        ids = sorted(tr.agent_id for tr in ep.agents)
        if ids != agent_ids:
            raise ValueError(
                f"episode {ep.episode_id} has agents {ids}, expected {agent_ids}"
            )
    k = len(episodes)
    batches: dict[int, _AgentBatch] = {}
    tracks = {
        n: [next(tr for tr in ep.agents if tr.agent_id == n) for ep in episodes]
        for n in agent_ids
    }
    for n in agent_ids:
        lengths = np.array([len(tr.decisions) for tr in tracks[n]], dtype=np.int64)
        tp = int(lengths.max())
        acts = np.zeros((k, tp), dtype=np.int64)
        obs = np.zeros((k, tp), dtype=np.int64)
        logb = np.zeros((k, tp))
        for i, tr in enumerate(tracks[n]):
            for j, d in enumerate(tr.decisions):
                acts[i, j] = d.action
                if j > 0:
                    obs[i, j] = d.obs
                logb[i, j] = np.log(d.behavior_prob)
        spec = specs[n]
        if acts.max() >= spec.n_actions or (tp > 1 and obs.max() >= spec.n_obs):
            raise ValueError(f"agent {n}: dataset index exceeds controller alphabet")
        batches[n] = _AgentBatch(spec, acts, obs, lengths, np.cumsum(logb, axis=1))

    ev_ep, ev_step, ev_reward = [], [], []
    ev_tprefix: dict[int, list[int]] = {n: [] for n in agent_ids}
    ev_logb, ev_epoch = [], []
    for i, ep in enumerate(episodes):
        starts = {
            n: [d.start_step for d in tracks[n][i].decisions] for n in agent_ids
        }
        for step, r in ep.rewards:
            ev_ep.append(i)
            ev_step.append(step)
            ev_reward.append(r)
            logb_total = 0.0
            epoch = 0
            for n in agent_ids:
                t = bisect_right(starts[n], step) - 1
                ev_tprefix[n].append(t)
                logb_total += float(batches[n].logb_cum[i, t])
                epoch = max(epoch, t)
            ev_logb.append(logb_total)
            ev_epoch.append(epoch)
    return TrainingData(
        episodes=list(episodes),
        agent_ids=agent_ids,
        batches=batches,
        ev_ep=np.asarray(ev_ep, dtype=np.int64),
        ev_step=np.asarray(ev_step, dtype=np.int64),
        ev_reward=np.asarray(ev_reward, dtype=np.float64),
        ev_tprefix={n: np.asarray(v, dtype=np.int64) for n, v in ev_tprefix.items()},
        ev_logb=np.asarray(ev_logb, dtype=np.float64),
        ev_epoch=np.asarray(ev_epoch, dtype=np.int64),
    )


def _as_training_data(episodes, theta: JointPolicy) -> TrainingData:
    if isinstance(episodes, TrainingData):
        return episodes
    return prepare_training_data(episodes, {n: p.spec for n, p in theta.items()})


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

@dataclass
class EStepBuffers:
    """Messages and event weights produced by one E-step."""

    data: TrainingData
    theta: JointPolicy
    alpha: dict[int, np.ndarray]       # agent -> (K, Tp, Q) scaled forward messages
    c_step: dict[int, np.ndarray]      # agent -> (K, Tp) per-step normalizers
    loglik_cum: dict[int, np.ndarray]  # agent -> (K, Tp) prefix log-likelihoods
    rtilde: np.ndarray                 # (E,) reweighted rewards
    sigma: np.ndarray                  # (E,) event weights under theta
    value: float                       # shifted empirical value = lower bound
    r_min: float


def _batched_forward(params: FscParams, batch: _AgentBatch, agent_id: int, episodes):
    k, tp = batch.acts.shape
    q = params.spec.n_nodes
    alpha = np.empty((k, tp, q))
    c = np.ones((k, tp))
    a0 = params.start[None, :] * params.emit0[:, batch.acts[:, 0]].T
    c0 = a0.sum(axis=1)
    if not np.all(np.isfinite(c0)) or np.any(c0 <= 0.0):
        bad = int(np.flatnonzero(~np.isfinite(c0) | (c0 <= 0.0))[0])
        raise NumericError(
            f"degenerate forward normalizer for episode {episodes[bad].episode_id}, agent {agent_id}, decision 0",
            location=(episodes[bad].episode_id, agent_id, 0),
        )
    alpha[:, 0] = a0 / c0[:, None]
    c[:, 0] = c0
    for t in range(1, tp):
        live = batch.lengths > t
        o = batch.obs[:, t]
        m = batch.acts[:, t]
        pred = np.einsum("kq,qkp->kp", alpha[:, t - 1], params.trans[:, o, :])
        a = pred * params.emit[:, o, m].T
        ct = a.sum(axis=1)
        bad = live & (~np.isfinite(ct) | (ct <= 0.0))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise NumericError(
                f"degenerate forward normalizer for episode {episodes[i].episode_id}, agent {agent_id}, decision {t}",
                location=(episodes[i].episode_id, agent_id, t),
            )
        safe = np.where(live, ct, 1.0)
        alpha[:, t] = np.where(live[:, None], a / safe[:, None], alpha[:, t - 1])
        c[:, t] = safe
    return alpha, c, np.cumsum(np.log(c), axis=1)


def e_step(
    theta: JointPolicy, episodes, cfg: LearnConfig
) -> tuple[EStepBuffers, float]:
    """Forward messages, event weights, and the current lower-bound value."""
    data = _as_training_data(episodes, theta)
    r_min = cfg.r_min if cfg.r_min is not None else min_reward(data.episodes)
    if data.n_events and float(data.ev_reward.min()) < r_min:
        raise ValueError(f"r_min={r_min} exceeds a reward present in the data")
    alpha, c_step, loglik = {}, {}, {}
    for n in data.agent_ids:
        alpha[n], c_step[n], loglik[n] = _batched_forward(
            theta[n], data.batches[n], n, data.episodes
        )
    e = data.n_events
    if e == 0:
        rtilde = np.zeros(0)
        sigma = np.zeros(0)
    else:
        exponent = data.ev_step if cfg.time_indexing == "primitive" else data.ev_epoch
        gap = data.ev_reward - r_min
        with np.errstate(divide="ignore"):
            log_rt = np.where(gap > 0, np.log(np.maximum(gap, 1e-300)), -np.inf)
        log_gamma = np.log(cfg.gamma) if cfg.gamma > 0 else -np.inf
        log_disc = np.where(exponent > 0, exponent * log_gamma, 0.0)
        log_rt = log_rt + log_disc - data.ev_logb
        log_sig = log_rt.copy()
        for n in data.agent_ids:
            log_sig += loglik[n][data.ev_ep, data.ev_tprefix[n]]
        rtilde = np.exp(log_rt)
        sigma = np.exp(log_sig)
        if not np.all(np.isfinite(sigma)):
            i = int(np.flatnonzero(~np.isfinite(sigma))[0])
            ep_id = data.episodes[int(data.ev_ep[i])].episode_id
            raise NumericError(
                f"non-finite event weight in episode {ep_id} at step {int(data.ev_step[i])}",
                location=(ep_id, None, int(data.ev_step[i])),
            )
    value = float(sigma.sum()) / len(data.episodes)
    buffers = EStepBuffers(
        data=data, theta=theta, alpha=alpha, c_step=c_step, loglik_cum=loglik,
        rtilde=rtilde, sigma=sigma, value=value, r_min=float(r_min),
    )
    return buffers, value


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def _normalize_or_copy(counts: np.ndarray, old: np.ndarray) -> np.ndarray:
    mass = counts.sum(axis=-1, keepdims=True)
    floored = counts + PROB_FLOOR
    normalized = floored / floored.sum(axis=-1, keepdims=True)
    return np.where(mass > 0.0, normalized, old)


def _agent_counts(params: FscParams, batch: _AgentBatch, alpha, c_step, row_ep, row_t, w):
    """Sigma-weighted expected counts for one agent via scaled backward passes.

    One backward row per reward event; rows activate at their prefix end
    and march to decision 0 together.
    """
    q, m_sz, o_sz = params.spec.n_nodes, params.spec.n_actions, params.spec.n_obs
    a_start = np.zeros(q)
    a_emit0 = np.zeros((m_sz, q))
    a_emit = np.zeros((o_sz * m_sz, q))
    a_trans = np.zeros((o_sz, q, q))
    n_rows = row_ep.size
    beta = np.zeros((n_rows, q))
    tmax = int(row_t.max()) if n_rows else 0
    for t in range(tmax, 0, -1):
        beta[row_t == t] = 1.0
        act = np.flatnonzero(row_t >= t)
        eps = row_ep[act]
        o = batch.obs[eps, t]
        m = batch.acts[eps, t]
        bet = beta[act]
        w_act = w[act]
        phi = alpha[eps, t] * bet
        np.add.at(a_emit, o * m_sz + m, w_act[:, None] * phi)
        emis = params.emit[:, o, m].T              # (A, Q) over destination node
        tr = params.trans[:, o, :].transpose(1, 0, 2)  # (A, Q, Q)
        core = emis * bet / c_step[eps, t][:, None]
        xi = alpha[eps, t - 1][:, :, None] * tr * core[:, None, :]
        np.add.at(a_trans, o, w_act[:, None, None] * xi)
        beta[act] = np.einsum("aqv,av->aq", tr, core)
    beta[row_t == 0] = 1.0
    phi0 = alpha[row_ep, 0] * beta
    wphi0 = w[:, None] * phi0
    a_start += wphi0.sum(axis=0)
    np.add.at(a_emit0, batch.acts[row_ep, 0], wphi0)
    return (
        a_start,
        a_emit0.T,                               # (Q, M)
        a_emit.reshape(o_sz, m_sz, q).transpose(2, 0, 1),  # (Q, O, M)
        a_trans.transpose(1, 0, 2),              # (Q, O, Q)
    )


def m_step(buffers: EStepBuffers, theta: JointPolicy, episodes=None) -> JointPolicy:
    """Re-estimate every controller from the E-step's weighted counts."""
    for n, params in theta.items():
        if n not in buffers.theta or params.spec != buffers.theta[n].spec:
            raise ValueError(f"agent {n}: parameters do not match the E-step buffers")
    data = buffers.data
    live = buffers.sigma > 0.0
    row_ep = data.ev_ep[live]
    w = buffers.sigma[live]
    new_theta: JointPolicy = {}
    for n in data.agent_ids:
        params = theta[n]
        if row_ep.size == 0:
            new_theta[n] = params
            continue
        row_t = data.ev_tprefix[n][live]
        a_start, a_emit0, a_emit, a_trans = _agent_counts(
            params, data.batches[n], buffers.alpha[n], buffers.c_step[n], row_ep, row_t, w
        )
        new_theta[n] = FscParams(
            spec=params.spec,
            start=_normalize_or_copy(a_start, params.start),
            emit0=_normalize_or_copy(a_emit0, params.emit0),
            emit=_normalize_or_copy(a_emit, params.emit),
            trans=_normalize_or_copy(a_trans, params.trans),
        )
    return new_theta


# ---------------------------------------------------------------------------
# posterior reference (single sequence)
# ---------------------------------------------------------------------------

def node_posteriors(
    params: FscParams, actions, observations, prefix_end: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Node posteriors for one action/observation prefix.

    Returns ``(phi, xi)`` with ``phi[tau]`` = p(q_tau | m_{0:t}, o_{1:t})
    for tau = 0..t and ``xi[tau]`` = p(q_tau, q_tau+1 | …) for tau < t,
    where t = ``prefix_end`` (default: the full sequence).
    """
    alpha, log_c = forward_messages(params, actions, observations)
    t_end = alpha.shape[0] - 1 if prefix_end is None else int(prefix_end)
    if not 0 <= t_end < alpha.shape[0]:
        raise ValueError(f"prefix_end {prefix_end} outside sequence")
    actions = np.asarray(actions, dtype=np.int64)
    observations = np.asarray(observations, dtype=np.int64)
    q = params.spec.n_nodes
    c = np.exp(log_c)
    beta = np.empty((t_end + 1, q))
    beta[t_end] = 1.0
    xi = np.empty((t_end, q, q))
    for tau in range(t_end - 1, -1, -1):
        o, m = observations[tau], actions[tau + 1]
        core = params.emit[:, o, m] * beta[tau + 1] / c[tau + 1]
        xi[tau] = alpha[tau][:, None] * params.trans[:, o, :] * core[None, :]
        beta[tau] = params.trans[:, o, :] @ core
    phi = alpha[: t_end + 1] * beta
    return phi, xi


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainStats:
    """Per-run convergence record of the EM loop."""

    lower_bound_trace: list[float] = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    r_min_used: float = 0.0

    def write_csv(self, dest) -> None:
        own = isinstance(dest, str)
        fh = open(dest, "w", encoding="utf-8") if own else dest
        try:
            fh.write("iteration,lower_bound\n")
            for i, lb in enumerate(self.lower_bound_trace, start=1):
                fh.write(f"{i},{lb!r}\n")
        finally:
            if own:
                fh.close()


def poem_train(
    theta_init: JointPolicy,
    episodes,
    cfg: LearnConfig,
    tol: float = 1e-3,
    max_inner: int = 200,
) -> tuple[JointPolicy, TrainStats]:
    """Alternate E and M steps until the bound's relative gain drops below ``tol``.

    Returns the final parameters and the per-iteration bound trace. With
    ``max_inner=0`` the initial parameters are returned untouched.
    """
    data = _as_training_data(episodes, theta_init)
    theta = theta_init
    stats = TrainStats()
    for it in range(1, max_inner + 1):
        buffers, lb = e_step(theta, data, cfg)
        stats.lower_bound_trace.append(lb)
        stats.iterations_run = it
        stats.r_min_used = buffers.r_min
        if lb == 0.0:
            # no event carries weight; the M-step would be a no-op
            stats.converged = True
            break
        if it >= 2:
            prev = stats.lower_bound_trace[-2]
            rel = (lb - prev) / abs(prev) if prev != 0.0 else np.inf
            if rel < tol:
                stats.converged = True
                break
        theta = m_step(buffers, theta)
    return theta, stats
