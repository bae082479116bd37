"""Benchmark sweeps comparing single-run EM against the restart wrapper.

Three presets mirror the experiment axes of the evaluation protocol:

========  =======================  =====================================
sweep     values                   fixed parameters
========  =======================  =====================================
``k``     50, 100, 200, 500        nodes 10, threads 8, rho 0.85
``m``     1, 2, 4, 8               nodes 10, K 500, rho 0.85
``q``     1, 3, 10                 threads 8, K 100, rho 0.85
========  =======================  =====================================

Each (sweep value, seed) cell generates a fresh dataset, splits off an
evaluation part, trains both algorithms on the same data, and scores both
on an independently generated test set with the importance-weighted value
estimator. One CSV row per (algorithm, sweep value, seed) plus aggregate
rows carrying mean / stddev / count.

The trainer runs a short, fixed inner-iteration budget per restart
(default 5). On this objective longer EM runs drift into trajectory
cloning, which the evaluation values then reject; the restart wrapper's
whole advantage is filtering such threads, and the short budget keeps a
healthy mix of good and degenerate threads to filter.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import IO, Sequence

from . import rng as rng_mod
from .behavior import BehaviorConfig, generate_dataset
from .dataset import LearnConfig, empirical_value, split_dataset
from .fsc import init_joint
from .isem import IsemConfig, isem_train
from .poem import poem_train
from .sim.scenario import ScenarioConfig, default_scenario, mini_scenario

SWEEP_VALUES = {"k": (50, 100, 200, 500), "m": (1, 2, 4, 8), "q": (1, 3, 10)}

BENCH_COLUMNS = (
    "kind", "algo", "sweep_var", "sweep_value", "seed",
    "value", "value_mean", "value_stddev", "seed_count",
)


@dataclass(frozen=True)
class BenchConfig:
    sweep: str
    mini: bool = True
    seeds: int = 10
    rho: float = 0.85
    nodes: int = 10
    threads: int = 8
    episodes: int = 100          # K when not swept
    test_episodes: int = 200
    eval_fraction: float = 0.3
    epsilon: float = 0.1
    max_outer: int = 2
    poem_max_inner: int = 5
    gamma: float = 0.999
    master_seed: int = 0

    def __post_init__(self):
        if self.sweep not in SWEEP_VALUES:
            raise ValueError(f"unknown sweep {self.sweep!r}, pick one of {sorted(SWEEP_VALUES)}")

    def scenario(self) -> ScenarioConfig:
        return mini_scenario() if self.mini else default_scenario()

    def cell(self, value: int) -> tuple[int, int, int]:
        """Resolve (episodes, nodes, threads) for one sweep point."""
        k, q, m = self.episodes, self.nodes, self.threads
        if self.sweep == "k":
            k = value
        elif self.sweep == "q":
            q = value
        else:
            m = value
        return k, q, m


def run_cell(
    cfg: BenchConfig, value: int, seed: int, scenario: ScenarioConfig
) -> dict[str, float]:
    """Train both algorithms on one (sweep value, seed) cell; return test values."""
    k, q, m = cfg.cell(value)
    learn = LearnConfig(gamma=cfg.gamma)
    specs = scenario.agent_specs(q)
    data = generate_dataset(
        BehaviorConfig(rho=cfg.rho, episodes=k, master_seed=seed, scenario=scenario)
    )
    test = generate_dataset(
        BehaviorConfig(
            rho=cfg.rho, episodes=cfg.test_episodes,
            master_seed=seed + 10_000, scenario=scenario,
        )
    )
    train, evals = split_dataset(data, cfg.eval_fraction, rng_mod.stream(seed, rng_mod.NS_SPLIT))
    isem_cfg = IsemConfig(
        threads=m, max_outer=cfg.max_outer, epsilon=cfg.epsilon, master_seed=seed,
        poem_max_inner=cfg.poem_max_inner,
    )
    theta_isem, _ = isem_train(train, evals, specs, isem_cfg, learn)
    gen = rng_mod.stream(seed, rng_mod.NS_RESTART, 1, 1)
    theta_poem, _ = poem_train(
        init_joint(specs.values(), gen), train, learn,
        tol=isem_cfg.poem_tol, max_inner=cfg.poem_max_inner,
    )
    return {
        "isem": empirical_value(test, theta_isem, learn),
        "poem": empirical_value(test, theta_poem, learn),
    }


def run_sweep(cfg: BenchConfig) -> list[dict]:
    """All cells of one sweep; per-seed rows first, then aggregates."""
    scenario = cfg.scenario()
    rows: list[dict] = []
    per_algo: dict[tuple[str, int], list[float]] = {}
    for value in SWEEP_VALUES[cfg.sweep]:
        for s in range(cfg.seeds):
            seed = cfg.master_seed + s
            cell = run_cell(cfg, value, seed, scenario)
            for algo, v in cell.items():
                rows.append(
                    {
                        "kind": "seed", "algo": algo, "sweep_var": cfg.sweep,
                        "sweep_value": value, "seed": seed, "value": v,
                        "value_mean": None, "value_stddev": None, "seed_count": None,
                    }
                )
                per_algo.setdefault((algo, value), []).append(v)
    for (algo, value), vals in sorted(per_algo.items()):
        rows.append(
            {
                "kind": "aggregate", "algo": algo, "sweep_var": cfg.sweep,
                "sweep_value": value, "seed": None, "value": None,
                "value_mean": statistics.fmean(vals),
                "value_stddev": statistics.stdev(vals) if len(vals) > 1 else 0.0,
                "seed_count": len(vals),
            }
        )
    return rows


def write_bench_csv(rows: Sequence[dict], dest: str | IO[str]) -> None:
    own = isinstance(dest, str)
    fh = open(dest, "w", encoding="utf-8") if own else dest
    try:
        fh.write(",".join(BENCH_COLUMNS) + "\n")
        for r in rows:
            fh.write(
                ",".join("" if r[c] is None else repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in BENCH_COLUMNS)
                + "\n"
            )
    finally:
        if own:
            fh.close()
