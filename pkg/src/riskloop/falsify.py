"""Assurance cases as budgeted searches for constraint-violating configurations.

A situation's domain features span the search space. Each sampled point is
turned into an :class:`~riskloop.sim.EnvConfig`, simulated, and scored by a
signed robustness margin that is negative exactly when the event's
constraint is violated. Search strategies minimise that margin.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from riskloop.model import Constraint, DomainFeature, RiskModel
from riskloop.scenario import SIM_INPUTS, Scenario
from riskloop.sim import EnvConfig, TraceSummary, simulate_batch

STRATEGIES = ("random", "evolutionary")

# evolutionary search settings
POPULATION = 20
TOURNAMENT = 3
MUTATION_SCALE = 0.1  # Gaussian sigma as a fraction of each dimension's range
CROSSOVER_RATE = 0.5
ELITES = 1
DISCRETE_RESAMPLE = 0.2

# episodes per simulate_batch call; bounds the memory of pre-drawn perception noise
CHUNK = 4096


class FalsificationError(ValueError):
    pass


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str
    lo: float = 0.0
    hi: float = 1.0
    unit: str | None = None
    categories: tuple[str, ...] = ()

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @classmethod
    def from_feature(cls, f: DomainFeature) -> Dimension:
        if f.is_discrete:
            return cls(f.name, "discrete", 0.0, float(len(f.categories) - 1), None, tuple(f.categories))
        return cls(f.name, "continuous", float(f.lo), float(f.hi), f.unit)


@dataclass(frozen=True)
class SearchSpace:
    """Ordered dimensions of one situation's domain features.

    Points are float vectors; discrete dimensions hold a category index.
    """

    situation: str
    dims: tuple[Dimension, ...]

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cols = []
        for d in self.dims:
            if d.is_discrete:
                cols.append(rng.integers(0, len(d.categories), size=n).astype(float))
            else:
                cols.append(rng.uniform(d.lo, d.hi, size=n))
        return np.column_stack(cols) if cols else np.empty((n, 0))

    def clip(self, points: np.ndarray) -> np.ndarray:
        lo = np.array([d.lo for d in self.dims])
        hi = np.array([d.hi for d in self.dims])
        return np.clip(points, lo, hi)

    def normalize(self, points: np.ndarray) -> np.ndarray:
        """Map points to the unit hypercube (discrete: index / (K - 1))."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty_like(points)
        for j, d in enumerate(self.dims):
            span = d.hi - d.lo
            out[:, j] = (points[:, j] - d.lo) / span if span > 0 else 0.0
        return out

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        unit = np.atleast_2d(np.asarray(unit, dtype=float))
        lo = np.array([d.lo for d in self.dims])
        hi = np.array([d.hi for d in self.dims])
        return lo + unit * (hi - lo)

    def values(self, point: Sequence[float]) -> dict[str, Any]:
        """Feature name -> value (category label for discrete dimensions)."""
        out: dict[str, Any] = {}
        for d, x in zip(self.dims, point):
            out[d.name] = d.categories[int(round(x))] if d.is_discrete else float(x)
        return out

    def point(self, values: dict[str, Any]) -> np.ndarray:
        out = []
        for d in self.dims:
            v = values[d.name]
            out.append(float(d.categories.index(v)) if d.is_discrete else float(v))
        return np.array(out)

    def env_config(self, point: Sequence[float], scenario: Scenario, seed: int) -> EnvConfig:
        """Simulator inputs for a point; inputs no dimension sets take the scenario default."""
        sim = dict(scenario.defaults)
        for d, x in zip(self.dims, point):
            key = scenario.features.get(d.name)
            if key is None:
                continue
            if key not in SIM_INPUTS:
                raise FalsificationError(f"feature {d.name!r} maps to unknown simulator input {key!r}")
            if d.is_discrete:
                label = d.categories[int(round(x))]
                try:
                    sim[key] = scenario.levels[d.name][label]
                except KeyError:
                    raise FalsificationError(
                        f"scenario gives no simulator value for {d.name!r} = {label!r}") from None
            else:
                sim[key] = float(x)
        return EnvConfig(sim, int(seed))


def build_search_space(model: RiskModel, situation: str) -> SearchSpace:
    try:
        s = model.situation(situation)
    except KeyError:
        raise FalsificationError(f"unknown situation {situation!r}") from None
    if not s.features:
        raise FalsificationError(f"situation {situation!r} has no domain features to search")
    return SearchSpace(situation, tuple(Dimension.from_feature(f) for f in s.features))


def objective(trace, constraint: Constraint) -> float:
    """Signed robustness margin of a trace (or summary) against a violation
    condition. Negative when the condition held.

    With the symbolic ``safety_distance`` bound the margin is taken step by
    step against the protective zone: the worst step's ``separation - zone``.
    """
    metric, comp = constraint.metric, constraint.comparator
    if metric not in ("min_separation", "detection_rate", "violation_time"):
        raise FalsificationError(f"unknown metric {metric!r}")
    below = comp in ("<", "<=")
    if constraint.symbolic:
        if metric != "min_separation" or constraint.bound != "safety_distance":
            raise FalsificationError(f"symbolic bound {constraint.bound!r} is not defined for {metric!r}")
        return trace.min_margin if below else -trace.max_margin
    value = getattr(trace, metric)
    if value is None:  # violation_time of a clean episode
        value = math.inf
    return value - constraint.bound if below else constraint.bound - value


def is_violation(objective_value: float, constraint: Constraint) -> bool:
    if constraint.comparator in ("<", ">"):
        return objective_value < 0
    return objective_value <= 0


def episode_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def default_workers() -> int:
    env = os.environ.get("RISKLOOP_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _simulate_chunk(args):
    configs, scenario = args
    return simulate_batch(configs, scenario)


def run_batch(configs: Sequence[EnvConfig], scenario: Scenario, workers: int = 1) -> list[TraceSummary]:
    """Simulate episodes, optionally across processes. Output order follows
    ``configs`` whatever the completion order."""
    chunks = [list(configs[i:i + CHUNK]) for i in range(0, len(configs), CHUNK)]
    if workers > 1 and len(configs) >= 64:
        size = math.ceil(len(configs) / workers)
        chunks = [list(configs[i:i + size]) for i in range(0, len(configs), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, [(c, scenario) for c in chunks]))
    else:
        parts = [simulate_batch(c, scenario) for c in chunks]
    return [s for part in parts for s in part]


@dataclass(frozen=True)
class Sample:
    index: int
    point: tuple[float, ...]
    values: dict[str, Any]
    config: EnvConfig
    objective: float
    violated: bool
    summary: TraceSummary | None = None


@dataclass(frozen=True)
class FalsificationResult:
    strategy: str
    seed: int
    budget: int
    situation: str
    event: str
    space: SearchSpace
    samples: tuple[Sample, ...] = field(default=())

    @property
    def budget_used(self) -> int:
        return len(self.samples)

    @property
    def best(self) -> Sample:
        return min(self.samples, key=lambda s: (s.objective, s.index))

    @property
    def violations(self) -> list[Sample]:
        return [s for s in self.samples if s.violated]

    @property
    def violation_rate(self) -> float:
        return len(self.violations) / len(self.samples) if self.samples else 0.0


class _Evaluator:
    def __init__(self, space, scenario, constraint, seed, workers):
        self.space, self.scenario, self.constraint = space, scenario, constraint
        self.seed, self.workers = seed, workers
        self.samples: list[Sample] = []

    def __call__(self, points: np.ndarray) -> list[Sample]:
        start = len(self.samples)
        configs = [self.space.env_config(p, self.scenario, episode_seed(self.seed, start + i))
                   for i, p in enumerate(points)]
        summaries = run_batch(configs, self.scenario, self.workers)
        new = []
        for i, (p, cfg, summ) in enumerate(zip(points, configs, summaries)):
            obj = objective(summ, self.constraint)
            new.append(Sample(start + i, tuple(float(x) for x in p), self.space.values(p), cfg, obj,
                              is_violation(obj, self.constraint), summ))
        self.samples += new
        return new


def _evaluate_until_violation(evaluate, points):
    """Evaluate one episode at a time; stop after the first violation."""
    for p in points:
        if evaluate(p[None, :])[0].violated:
            return True
    return False


def falsify(model: RiskModel, situation: str, event: str, budget: int, strategy: str = "evolutionary",
            seed: int = 0, scenario: Scenario | None = None, early_stop: bool = False,
            workers: int = 1) -> FalsificationResult:
    """Search the situation's feature space for configurations violating the
    event's constraint, spending at most ``budget`` episodes."""
    if strategy not in STRATEGIES:
        raise FalsificationError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if not isinstance(budget, (int, np.integer)) or budget < 1:
        raise FalsificationError("budget must be a positive integer")
    space = build_search_space(model, situation)
    try:
        ev = model.event(event)
    except KeyError:
        raise FalsificationError(f"unknown event {event!r}") from None
    if event not in model.exposed_events(situation):
        raise FalsificationError(f"event {event!r} is not exposed by situation {situation!r}")
    scenario = scenario or Scenario()
    rng = np.random.default_rng(seed)
    evaluate = _Evaluator(space, scenario, ev.constraint, seed, workers)

    if strategy == "random":
        points = space.sample(rng, budget)
        if early_stop:
            _evaluate_until_violation(evaluate, points)
        else:
            evaluate(points)
    else:
        _evolve(space, evaluate, rng, budget, early_stop)
    return FalsificationResult(strategy, int(seed), int(budget), situation, event, space, tuple(evaluate.samples))


def _evolve(space: SearchSpace, evaluate: _Evaluator, rng: np.random.Generator, budget: int, early_stop: bool):
    d = len(space)
    discrete = np.array([dim.is_discrete for dim in space.dims])
    n_cats = np.array([len(dim.categories) for dim in space.dims])
    sigma = MUTATION_SCALE * np.array([dim.hi - dim.lo for dim in space.dims])

    def run(points):
        if early_stop:
            stop = _evaluate_until_violation(evaluate, points)
            return evaluate.samples[-len(points):] if not stop else None
        return evaluate(points)

    first = space.sample(rng, min(POPULATION, budget))
    start = len(evaluate.samples)
    if run(first) is None:
        return
    population = list(evaluate.samples[start:])

    while len(evaluate.samples) < budget:
        fitness = np.array([s.objective for s in population])
        elites = [population[i] for i in np.argsort(fitness, kind="stable")[:ELITES]]
        n_children = min(POPULATION - ELITES, budget - len(evaluate.samples))
        children = np.empty((n_children, d))
        for c in range(n_children):
            a = population[_tournament(rng, fitness)].point
            b = population[_tournament(rng, fitness)].point
            swap = rng.random(d) < CROSSOVER_RATE
            child = np.where(swap, b, a)
            noise = rng.normal(0.0, 1.0, d) * sigma
            resample = rng.random(d) < DISCRETE_RESAMPLE
            categories = np.floor(rng.random(d) * np.maximum(n_cats, 1))
            child = np.where(discrete, np.where(resample, categories, child), child + noise)
            children[c] = child
        children = space.clip(children)
        start = len(evaluate.samples)
        if run(children) is None:
            return
        population = elites + list(evaluate.samples[start:])


def _tournament(rng: np.random.Generator, fitness: np.ndarray) -> int:
    k = min(TOURNAMENT, len(fitness))
    contenders = rng.choice(len(fitness), size=k, replace=False)
    return int(contenders[np.argmin(fitness[contenders])])


def conditional_violation_prob(space: SearchSpace, model: RiskModel, situation: str, event: str, n: int,
                               seed: int = 0, scenario: Scenario | None = None, workers: int = 1) -> float:
    """Fraction of ``n`` uniformly sampled configurations whose episode
    violates the event's constraint."""
    if n < 1:
        raise FalsificationError("n must be at least 1")
    result = falsify(model, situation, event, n, "random", seed, scenario, workers=workers)
    return result.violation_rate


# -- serialisation -----------------------------------------------------------

def _num(x: float):
    return x if math.isfinite(x) else None


def _config_json(space: SearchSpace, values: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for d in space.dims:
        entry: dict[str, Any] = {"value": values[d.name]}
        if d.unit is not None:
            entry["unit"] = d.unit
        out[d.name] = entry
    return out


def _sample_json(space: SearchSpace, s: Sample) -> dict[str, Any]:
    return {
        "index": s.index,
        "seed": s.config.seed,
        "config": _config_json(space, s.values),
        "objective": _num(s.objective),
        "violated": s.violated,
    }


def result_to_dict(result: FalsificationResult) -> dict[str, Any]:
    return {
        "situation": result.situation,
        "event": result.event,
        "strategy": result.strategy,
        "seed": result.seed,
        "budget": result.budget,
        "budget_used": result.budget_used,
        "features": [d.name for d in result.space.dims],
        "samples": [_sample_json(result.space, s) for s in result.samples],
        "best": _sample_json(result.space, result.best),
    }


def result_from_dict(data: dict[str, Any], space: SearchSpace, scenario: Scenario) -> FalsificationResult:
    """Rebuild a result from its JSON form. Trace summaries are not stored, so
    samples come back without them."""
    try:
        samples = []
        for item in data["samples"]:
            values = {name: item["config"][name]["value"] for name in space.names}
            point = space.point(values)
            obj = item["objective"]
            samples.append(Sample(int(item["index"]), tuple(point), values,
                                  space.env_config(point, scenario, int(item["seed"])),
                                  math.inf if obj is None else float(obj), bool(item["violated"])))
        return FalsificationResult(data["strategy"], int(data["seed"]), int(data["budget"]),
                                   data["situation"], data["event"], space, tuple(samples))
    except (KeyError, TypeError, ValueError) as exc:
        raise FalsificationError(f"malformed falsification result: {exc}") from exc


def summary_csv(result: FalsificationResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "seed", *result.space.names, "objective", "violated",
                     "min_separation", "violation_time", "detection_rate"])
    for s in result.samples:
        summ = s.summary
        writer.writerow([
            s.index, s.config.seed, *[s.values[n] for n in result.space.names], repr(s.objective), int(s.violated),
            "" if summ is None else repr(summ.min_separation),
            "" if summ is None or summ.violation_time is None else repr(summ.violation_time),
            "" if summ is None else repr(summ.detection_rate),
        ])
    return buf.getvalue()
