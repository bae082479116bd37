"""Concurrent random-restart wrapper around the EM trainer.

Runs M training threads from independent flat-Dirichlet initializations,
evaluates every converged controller on a held-out evaluation set, keeps
the threads whose value is within ``epsilon`` of the best, and resamples
the rest from scratch. The loop continues while any thread needs
resampling and the outer-iteration budget remains.

Thread i at outer iteration t draws from a stream keyed
``(master_seed, thread=i, outer=t)``, so results are identical no matter
how the threads are scheduled. The returned policy is the best ever seen
across outer iterations, which makes the best-value trace exactly
nondecreasing even when every resampled thread regresses.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Sequence

from . import rng
from .dataset import Episode, LearnConfig, empirical_value
from .errors import InsufficientDataError, TrainingError
from .fsc import AgentSpec, JointPolicy, init_joint
from .poem import TrainStats, poem_train, prepare_training_data

WORKERS_ENV = "SAREM_WORKERS"


@dataclass(frozen=True)
class IsemConfig:
    """Restart-wrapper inputs: thread count, budget, retention threshold."""

    threads: int = 8
    max_outer: int = 20
    epsilon: float = 0.1
    epsilon_mode: str = "absolute"  # or "relative" (scaled by |best value|)
    node_count: int | None = None   # overrides every agent's controller size
    master_seed: int = 0
    poem_tol: float = 1e-3
    poem_max_inner: int = 200
    workers: int | None = None      # defaults to $SAREM_WORKERS or threads

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.epsilon_mode not in ("absolute", "relative"):
            raise ValueError(f"unknown epsilon_mode {self.epsilon_mode!r}")


@dataclass
class ThreadOutcome:
    thread: int
    outer: int
    value: float
    theta: JointPolicy
    stats: TrainStats


@dataclass
class IsemState:
    """Full account of one wrapper run."""

    records: list[dict] = field(default_factory=list)  # one row per (outer, thread)
    best_value_trace: list[float] = field(default_factory=list)
    best: ThreadOutcome | None = None
    outer_iterations: int = 0

    def write_csv(self, dest: str | IO[str]) -> None:
        own = isinstance(dest, str)
        fh = open(dest, "w", encoding="utf-8") if own else dest
        try:
            fh.write("iteration,thread,eval_value,retained_flag,best_value\n")
            for r in self.records:
                fh.write(
                    f"{r['iteration']},{r['thread']},{r['eval_value']!r},"
                    f"{int(r['retained_flag'])},{r['best_value']!r}\n"
                )
        finally:
            if own:
                fh.close()


def _worker_count(cfg: IsemConfig) -> int:
    if cfg.workers is not None:
        return max(1, cfg.workers)
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return cfg.threads


def isem_train(
    d_train: Sequence[Episode],
    d_eval: Sequence[Episode],
    specs: dict[int, AgentSpec],
    cfg: IsemConfig,
    learn: LearnConfig = LearnConfig(),
) -> tuple[JointPolicy, IsemState]:
    """Train with random restarts; return the best policy and the run record."""
    if not d_train or not d_eval:
        raise InsufficientDataError("training and evaluation sets must be nonempty")
    train_ids = {ep.episode_id for ep in d_train}
    if train_ids & {ep.episode_id for ep in d_eval}:
        raise ValueError("training and evaluation sets overlap")
    if cfg.node_count is not None:
        specs = {n: s.with_nodes(cfg.node_count) for n, s in specs.items()}
    data = prepare_training_data(d_train, specs)

    def run_thread(thread: int, outer: int) -> ThreadOutcome:
        try:
            gen = rng.stream(cfg.master_seed, rng.NS_RESTART, thread, outer)
            theta0 = init_joint(specs.values(), gen)
            theta, stats = poem_train(
                theta0, data, learn, tol=cfg.poem_tol, max_inner=cfg.poem_max_inner
            )
            value = empirical_value(d_eval, theta, learn)
            return ThreadOutcome(thread, outer, value, theta, stats)
        except Exception as exc:
            raise TrainingError(
                f"thread {thread} failed at outer iteration {outer} "
                f"(stream key: master_seed={cfg.master_seed}, "
                f"spawn=({rng.NS_RESTART}, {thread}, {outer})): {exc}"
            ) from exc

    state = IsemState()
    latest: dict[int, ThreadOutcome] = {}
    retained: set[int] = set()
    all_threads = list(range(1, cfg.threads + 1))
    with ThreadPoolExecutor(max_workers=_worker_count(cfg)) as pool:
        for outer in range(1, cfg.max_outer + 1):
            resample = [i for i in all_threads if i not in retained]
            if not resample:
                break
            state.outer_iterations = outer
            for i, outcome in zip(resample, pool.map(lambda i: run_thread(i, outer), resample)):
                latest[i] = outcome
            round_best = max(latest.values(), key=lambda o: (o.value, -o.thread))
            if state.best is None or round_best.value > state.best.value:
                state.best = round_best
            best_value = state.best.value
            tol = cfg.epsilon if cfg.epsilon_mode == "absolute" else cfg.epsilon * abs(best_value)
            retained = {i for i in all_threads if best_value - latest[i].value < tol}
            state.best_value_trace.append(best_value)
            for i in all_threads:
                state.records.append(
                    {
                        "iteration": outer,
                        "thread": i,
                        "eval_value": latest[i].value,
                        "retained_flag": i in retained,
                        "best_value": best_value,
                    }
                )
    assert state.best is not None
    return state.best.theta, state
