import hashlib
import io
import statistics

import numpy as np
import pytest

from sarem.behavior import BehaviorConfig, expert_action, generate_dataset, mixture_decision
from sarem.dataset import write_episodes
from sarem.sim import default_scenario, mini_scenario
from sarem.sim.observe import AgentKnowledge, SiteKnowledge


class TestExpertAction:
    def test_carrying_ugv_heads_home(self):
        sc = default_scenario()
        macro = expert_action(AgentKnowledge(), carrying=True, self_site=4, kind="ugv", scenario=sc)
        assert macro == 0  # go to muster

    def test_ugv_at_needy_site_picks_up(self):
        sc = default_scenario()
        know = AgentKnowledge()
        know.sites[4] = SiteKnowledge(state=2, stamp=9)
        macro = expert_action(know, carrying=False, self_site=4, kind="ugv", scenario=sc)
        assert macro == sc.pickup_macro

    def test_ugv_prefers_urgent_then_stale(self):
        sc = default_scenario()
        know = AgentKnowledge()
        know.sites[2] = SiteKnowledge(state=1, stamp=9)
        know.sites[3] = SiteKnowledge(state=2, stamp=9)
        macro = expert_action(know, carrying=False, self_site=1, kind="ugv", scenario=sc)
        assert macro == 2  # site 3, the critical one
        know.sites[3] = SiteKnowledge(state=1, stamp=2)
        macro = expert_action(know, carrying=False, self_site=1, kind="ugv", scenario=sc)
        assert macro == 2  # equal urgency: least recently observed wins

    def test_uav_with_everything_stale_goes_to_site_two(self):
        sc = default_scenario()
        macro = expert_action(AgentKnowledge(), carrying=False, self_site=1, kind="uav", scenario=sc)
        assert macro == 1  # site 2: lowest non-muster id

    def test_uav_cycles_to_stalest(self):
        sc = default_scenario()
        know = AgentKnowledge()
        for site, stamp in ((2, 5), (3, 1), (4, 9), (5, 2), (6, 3)):
            know.sites[site] = SiteKnowledge(state=0, stamp=stamp)
        macro = expert_action(know, carrying=False, self_site=4, kind="uav", scenario=sc)
        assert macro == 2  # site 3 has the oldest stamp


class TestMixtureDecision:
    def test_pure_random_probability(self):
        gen = np.random.default_rng(0)
        initiable = [0, 1, 2, 3]
        for _ in range(20):
            macro, p = mixture_decision(2, initiable, rho=0.0, rng=gen)
            assert macro in initiable
            assert p == pytest.approx(0.25)

    def test_mixture_mass_arithmetic(self):
        gen = np.random.default_rng(1)
        initiable = list(range(7))
        probs = set()
        for _ in range(200):
            macro, p = mixture_decision(4, initiable, rho=0.85, rng=gen)
            probs.add((macro == 4, round(p, 12)))
        assert (True, round(0.85 + 0.15 / 7, 12)) in probs
        assert (False, round(0.15 / 7, 12)) in probs

    def test_expert_frequency(self):
        gen = np.random.default_rng(2)
        initiable = list(range(5))
        expert = 3
        trials = 100_000
        hits = sum(
            mixture_decision(expert, initiable, rho=0.75, rng=gen)[0] == expert
            for _ in range(trials)
        )
        expected = 0.75 + 0.25 / 5
        assert abs(hits / trials - expected) < 0.01

    def test_empty_initiable_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            mixture_decision(0, [], 0.5, np.random.default_rng(0))

    def test_non_initiable_expert_rejected(self):
        with pytest.raises(ValueError, match="not initiable"):
            mixture_decision(6, [0, 1], 0.5, np.random.default_rng(0))


class TestBehaviorConfig:
    def test_rho_one_rejected(self):
        with pytest.raises(ValueError, match="rho"):
            BehaviorConfig(rho=1.0, episodes=1, master_seed=0, scenario=mini_scenario())


class TestGenerateDataset:
    def test_zero_episodes(self):
        cfg = BehaviorConfig(rho=0.5, episodes=0, master_seed=0, scenario=mini_scenario())
        assert generate_dataset(cfg) == []

    def test_regeneration_is_byte_identical(self):
        cfg = BehaviorConfig(rho=0.75, episodes=12, master_seed=21, scenario=mini_scenario())
        digests = []
        for _ in range(2):
            buf = io.StringIO()
            write_episodes(generate_dataset(cfg), buf)
            digests.append(hashlib.sha256(buf.getvalue().encode()).hexdigest())
        assert digests[0] == digests[1]

    def test_logged_probabilities_are_exact_mixture_masses(self):
        rho = 0.6
        sc = mini_scenario()
        cfg = BehaviorConfig(rho=rho, episodes=6, master_seed=4, scenario=sc)
        episodes = generate_dataset(cfg)
        n_actions = {a.agent_id: sc.n_actions(a.kind) for a in sc.agents}
        for ep in episodes:
            for tr in ep.agents:
                for d in tr.decisions:
                    lo = (1 - rho) / n_actions[tr.agent_id]
                    assert lo - 1e-12 <= d.behavior_prob < 1.0
                    # every logged mass is either expert+uniform or uniform
                    sizes = range(1, n_actions[tr.agent_id] + 1)
                    legal = {rho + (1 - rho) / k for k in sizes} | {(1 - rho) / k for k in sizes}
                    assert any(abs(d.behavior_prob - p) < 1e-12 for p in legal)

    def test_mean_return_nondecreasing_in_rho(self):
        sc = mini_scenario()
        means = []
        for rho in (0.5, 0.75, 0.85):
            eps = generate_dataset(
                BehaviorConfig(rho=rho, episodes=60, master_seed=33, scenario=sc)
            )
            means.append(statistics.mean(sum(r for _, r in ep.rewards) for ep in eps))
        assert means[0] <= means[1] <= means[2]

    def test_episode_ids_sequential_and_digest_stamped(self):
        from sarem.sim import scenario_digest

        sc = mini_scenario()
        cfg = BehaviorConfig(rho=0.5, episodes=5, master_seed=1, scenario=sc)
        eps = generate_dataset(cfg)
        assert [ep.episode_id for ep in eps] == list(range(5))
        assert all(ep.scenario_digest == scenario_digest(sc) for ep in eps)
