"""Figure rendering for training traces and benchmark sweeps.

Every reporting path that writes delimited output also renders a small
matplotlib figure next to it. Files only; no interactive backends.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .isem import IsemState
from .poem import TrainStats


def plot_train_trace(stats: TrainStats, path: str) -> None:
    """Lower-bound trace of one EM run."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    iterations = range(1, len(stats.lower_bound_trace) + 1)
    ax.plot(iterations, stats.lower_bound_trace, marker="o", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("lower bound")
    ax.set_yscale("symlog")
    ax.set_title("EM lower-bound trace")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={})
    plt.close(fig)


def plot_isem_trace(state: IsemState, path: str) -> None:
    """Per-thread evaluation values and the running best per outer round."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = [r["iteration"] for r in state.records]
    ys = [r["eval_value"] for r in state.records]
    kept = [r["retained_flag"] for r in state.records]
    kept_pts = [(x, y) for x, y, k in zip(xs, ys, kept) if k]
    drop_pts = [(x, y) for x, y, k in zip(xs, ys, kept) if not k]
    if kept_pts:
        ax.scatter(*zip(*kept_pts), s=18, label="retained", color="tab:blue")
    if drop_pts:
        ax.scatter(*zip(*drop_pts), s=18, label="resampled", color="tab:red", marker="x")
    rounds = range(1, len(state.best_value_trace) + 1)
    ax.step(rounds, state.best_value_trace, where="post", color="black", label="best")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("evaluation value")
    ax.set_title("restart threads")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={})
    plt.close(fig)


def plot_bench(rows: list[dict], sweep_var: str, path: str) -> None:
    """Mean +/- stddev of test values per sweep point, one line per algorithm."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    algos = sorted({r["algo"] for r in rows if r["kind"] == "aggregate"})
    for algo in algos:
        pts = sorted(
            (r for r in rows if r["kind"] == "aggregate" and r["algo"] == algo),
            key=lambda r: r["sweep_value"],
        )
        xs = [r["sweep_value"] for r in pts]
        means = [r["value_mean"] for r in pts]
        errs = [r["value_stddev"] for r in pts]
        ax.errorbar(xs, means, yerr=errs, marker="o", ms=4, capsize=3, label=algo)
    ax.set_xlabel(sweep_var)
    ax.set_ylabel("test value")
    ax.set_title(f"sweep over {sweep_var}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={})
    plt.close(fig)
