import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from riskloop.dsl import parse_model, serialize_model
from riskloop.falsify import (
    FalsificationError,
    build_search_space,
    conditional_violation_prob,
    episode_seed,
    falsify,
    is_violation,
    objective,
    result_from_dict,
    result_to_dict,
    summary_csv,
)
from riskloop.model import Constraint
from riskloop.sim import TraceSummary, simulate_batch

SIT, EVENT = "close interaction", "insufficient distance"
SAFETY = Constraint("min_separation", "<", "safety_distance")


def summary(min_margin, max_margin=1.0, min_sep=1.0, vt=None, rate=1.0):
    return TraceSummary(min_sep, vt, rate, min_margin, max_margin)


def with_bound(model, bound):
    text = serialize_model(model).replace("min_separation < safety_distance", f"min_separation < {bound}")
    return parse_model(text)


DISCRETE_MODEL = '''model "m" {
  situation "s" {
    feature "speed of the human motion" : continuous [0.0, 2.0] "m/s"
    feature "light" : discrete { "dim", "bright" }
    exposes "e"
  }
  event "e" { constraint : min_separation < safety_distance }
}'''


class TestSearchSpace:
    def test_bundled_dimensions(self, cell_model):
        space = build_search_space(cell_model, SIT)
        assert [(d.name, d.lo, d.hi, d.unit) for d in space.dims] == [
            ("speed of the human motion", 0.0, 2.0, "m/s"),
            ("speed of the robot motion", 0.5, 2.0, "m/s"),
            ("luminance of the working area", 50.0, 1000.0, "lux"),
        ]

    def test_no_features(self):
        model = parse_model('model "m" { situation "s" { indicator "i" : boolean } }')
        with pytest.raises(FalsificationError, match="no domain features"):
            build_search_space(model, "s")

    def test_unknown_situation(self, cell_model):
        with pytest.raises(FalsificationError):
            build_search_space(cell_model, "nap time")

    def test_discrete_dimension(self):
        space = build_search_space(parse_model(DISCRETE_MODEL), "s")
        assert space.dims[1].categories == ("dim", "bright")
        pts = space.sample(np.random.default_rng(0), 200)
        assert set(pts[:, 1]) == {0.0, 1.0}
        assert space.values(pts[0])["light"] in ("dim", "bright")

    def test_uniform_marginals(self, cell_model):
        space = build_search_space(cell_model, SIT)
        pts = space.sample(np.random.default_rng(123), 10_000)
        for j, d in enumerate(space.dims):
            ks = stats.kstest(pts[:, j], stats.uniform(d.lo, d.hi - d.lo).cdf).statistic
            assert ks <= 0.02, d.name


class TestObjective:
    def test_clear_margin(self):
        assert objective(summary(0.5), SAFETY) >= 0.5

    def test_intrusion(self):
        assert objective(summary(-0.1), SAFETY) <= -0.1

    @pytest.mark.parametrize("c, s, expected", [
        (Constraint("detection_rate", "<", 0.9), summary(0, rate=0.7), -0.2),
        (Constraint("detection_rate", ">", 0.9), summary(0, rate=0.7), 0.2),
        (Constraint("min_separation", "<=", 0.5), summary(0, min_sep=0.5), 0.0),
        (Constraint("violation_time", "<", 5.0), summary(0, vt=2.0), -3.0),
        (Constraint("violation_time", "<", 5.0), summary(0), float("inf")),
        (Constraint("min_separation", ">", "safety_distance"), summary(0, max_margin=0.25), -0.25),
    ])
    def test_literal_bounds(self, c, s, expected):
        assert objective(s, c) == pytest.approx(expected)

    def test_non_strict_boundary_is_violation(self):
        assert is_violation(0.0, Constraint("min_separation", "<=", 0.5))
        assert not is_violation(0.0, Constraint("min_separation", "<", 0.5))

    def test_unknown_metric(self):
        with pytest.raises(FalsificationError):
            objective(summary(0), Constraint("jerk", "<", 1.0))

    def test_sign_matches_trace_flag(self, cell_model, cell):
        space = build_search_space(cell_model, SIT)
        pts = space.sample(np.random.default_rng(5), 1000)
        configs = [space.env_config(p, cell, episode_seed(5, i)) for i, p in enumerate(pts)]
        for s in simulate_batch(configs, cell):
            assert (objective(s, SAFETY) < 0) == s.violated
        assert 0 < sum(s.violated for s in simulate_batch(configs, cell)) < 1000


class TestFalsify:
    @pytest.mark.parametrize("strategy", ["random", "evolutionary"])
    def test_budget_one(self, cell_model, cell, strategy):
        r = falsify(cell_model, SIT, EVENT, 1, strategy, seed=3, scenario=cell)
        assert r.budget_used == 1
        assert r.best is r.samples[0]

    @pytest.mark.parametrize("strategy", ["random", "evolutionary"])
    def test_budget_accounting_and_invariants(self, cell_model, cell, strategy):
        r = falsify(cell_model, SIT, EVENT, 57, strategy, seed=1, scenario=cell)
        assert r.budget_used == 57
        assert [s.index for s in r.samples] == list(range(57))
        assert r.best.objective == min(s.objective for s in r.samples)
        assert all(s.violated == (s.objective < 0) for s in r.samples)

    @given(st.integers(0, 2**31), st.integers(1, 80))
    def test_evolutionary_respects_bounds(self, cell_model, cell, seed, budget):
        r = falsify(cell_model, SIT, EVENT, budget, "evolutionary", seed=seed, scenario=cell)
        space = r.space
        pts = np.array([s.point for s in r.samples])
        assert np.all(pts >= [d.lo for d in space.dims])
        assert np.all(pts <= [d.hi for d in space.dims])

    def test_deterministic(self, cell_model, cell):
        a = falsify(cell_model, SIT, EVENT, 60, "evolutionary", seed=9, scenario=cell)
        b = falsify(cell_model, SIT, EVENT, 60, "evolutionary", seed=9, scenario=cell)
        assert result_to_dict(a) == result_to_dict(b)
        assert summary_csv(a) == summary_csv(b)

    def test_parallel_matches_serial(self, cell_model, cell):
        a = falsify(cell_model, SIT, EVENT, 80, "random", seed=4, scenario=cell, workers=1)
        b = falsify(cell_model, SIT, EVENT, 80, "random", seed=4, scenario=cell, workers=2)
        assert result_to_dict(a) == result_to_dict(b)

    @pytest.mark.parametrize("strategy", ["random", "evolutionary"])
    def test_early_stop(self, cell_model, violating, strategy):
        r = falsify(cell_model, SIT, EVENT, 200, strategy, seed=0, scenario=violating, early_stop=True)
        assert r.budget_used < 200
        assert r.samples[-1].violated
        assert not any(s.violated for s in r.samples[:-1])

    def test_evolution_improves_on_its_first_generation(self, cell_model, violating):
        r = falsify(cell_model, SIT, EVENT, 200, "evolutionary", seed=2, scenario=violating)
        first = min(s.objective for s in r.samples[:20])
        assert r.best.objective < first

    def test_discrete_search(self, cell):
        model = parse_model(DISCRETE_MODEL)
        scenario = replace(cell, features={**cell.features, "light": "luminance"},
                           levels={"light": {"dim": 50.0, "bright": 1000.0}})
        r = falsify(model, "s", "e", 60, "evolutionary", seed=0, scenario=scenario)
        lums = {s.config["luminance"] for s in r.samples}
        assert lums <= {50.0, 1000.0}
        assert {s.values["light"] for s in r.samples} <= {"dim", "bright"}

    @pytest.mark.parametrize("kw, match", [
        ({"strategy": "annealing", "budget": 10}, "strategy"),
        ({"budget": 0}, "budget"),
    ])
    def test_bad_arguments(self, cell_model, cell, kw, match):
        kw = {"strategy": "random", **kw}
        with pytest.raises(FalsificationError, match=match):
            falsify(cell_model, SIT, EVENT, kw["budget"], kw["strategy"], scenario=cell)

    def test_event_must_be_exposed(self, cell_model, cell):
        with pytest.raises(FalsificationError, match="not exposed"):
            falsify(cell_model, SIT, "poor AI quality", 5, scenario=cell)

    def test_json_round_trip(self, cell_model, violating):
        r = falsify(cell_model, SIT, EVENT, 30, "evolutionary", seed=6, scenario=violating)
        data = json.loads(json.dumps(result_to_dict(r)))
        assert data["budget_used"] == 30
        assert data["samples"][0]["config"]["luminance of the working area"]["unit"] == "lux"
        back = result_from_dict(data, r.space, violating)
        assert [(s.point, s.objective, s.violated, s.config) for s in back.samples] == \
            [(s.point, s.objective, s.violated, s.config) for s in r.samples]


class TestViolationProbability:
    def test_fenced_human_never_violates(self, cell_model, fenced):
        space = build_search_space(cell_model, SIT)
        assert conditional_violation_prob(space, cell_model, SIT, EVENT, 300, seed=1, scenario=fenced) == 0.0

    def test_bound_above_diagonal_always_violates(self, cell_model, cell):
        model = with_bound(cell_model, 6.0)
        assert 6.0 > np.hypot(*cell.workspace)
        space = build_search_space(model, SIT)
        assert conditional_violation_prob(space, model, SIT, EVENT, 300, seed=1, scenario=cell) == 1.0

    def test_n_must_be_positive(self, cell_model, cell):
        with pytest.raises(FalsificationError):
            conditional_violation_prob(build_search_space(cell_model, SIT), cell_model, SIT, EVENT, 0, scenario=cell)

    def test_episode_seeds_distinct(self):
        seeds = {episode_seed(0, i) for i in range(1000)} | {episode_seed(1, i) for i in range(1000)}
        assert len(seeds) == 2000
