"""Risk quantification and goal-satisfaction propagation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

from riskloop.model import RiskModel, Situation, errors, refinement_order, validate


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class SituationAssessment:
    situation: str
    activation: float
    indicator_values: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class EventRisk:
    name: str
    likelihood: float
    severity: float

    @property
    def exposure(self) -> float:
        return self.likelihood * self.severity


@dataclass(frozen=True)
class GoalSatisfaction:
    name: str
    satisfaction: float


@dataclass(frozen=True)
class RiskReport:
    model: str
    events: tuple[EventRisk, ...] = ()
    goals: tuple[GoalSatisfaction, ...] = ()
    evidence: tuple[str, ...] = ()

    def satisfaction(self, goal: str) -> float:
        for g in self.goals:
            if g.name == goal:
                return g.satisfaction
        raise KeyError(goal)

    def event(self, name: str) -> EventRisk:
        for e in self.events:
            if e.name == name:
                return e
        raise KeyError(name)


def _unit_interval(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise AnalysisError(f"{name} must lie in [0, 1], got {value}")
    return value


def assess_situation(situation: Situation, indicator_values: Mapping[str, object],
                     feature_probability: float = 1.0) -> SituationAssessment:
    """Activation of a situation: 1 when every indicator holds, scaled by the
    probability that features fall in their risk-relevant region."""
    feature_probability = _unit_interval("feature_probability", feature_probability)
    active = 1.0
    for ind in situation.indicators:
        if ind.name not in indicator_values:
            raise AnalysisError(f"no value supplied for indicator {ind.name!r} of {situation.name!r}")
        if not ind.holds(indicator_values[ind.name]):
            active = 0.0
    return SituationAssessment(situation.name, active * feature_probability, dict(indicator_values))


def event_likelihood(activation: float, conditional_violation_prob: float) -> float:
    a = _unit_interval("activation", activation)
    p = _unit_interval("conditional_violation_prob", conditional_violation_prob)
    return min(1.0, max(0.0, a * p))


def propagate(model: RiskModel, event_likelihoods: Mapping[str, float],
              evidence: tuple[str, ...] = ()) -> RiskReport:
    """Goal satisfaction under the given event likelihoods.

    Events missing from ``event_likelihoods`` keep the model's likelihood.
    A goal's own impacts contribute the product of ``1 - likelihood * severity``,
    which multiplies the minimum over children for AND goals and the maximum
    for OR goals.
    """
    names = {e.name for e in model.events}
    unknown = sorted(set(event_likelihoods) - names)
    if unknown:
        raise AnalysisError(f"unknown events: {unknown}")
    problems = errors(validate(model))
    if problems:
        raise AnalysisError("model is not valid: " + "; ".join(str(d) for d in problems))

    likelihood = {e.name: _unit_interval(f"likelihood of {e.name!r}", event_likelihoods.get(e.name, e.likelihood))
                  for e in model.events}
    events = tuple(EventRisk(e.name, likelihood[e.name], model.impact_severity(e.name)) for e in model.events)

    satisfaction: dict[str, float] = {}
    for name in refinement_order(model):
        value = 1.0
        for r in model.impacts_on(name):
            value *= 1.0 - likelihood[r.source] * r.severity
        children = [satisfaction[c] for c in model.children(name)]
        if children:
            value *= min(children) if model.goal(name).refinement == "AND" else max(children)
        satisfaction[name] = value
    goals = tuple(GoalSatisfaction(g.name, satisfaction[g.name]) for g in model.goals)
    return RiskReport(model.name, events, goals, tuple(evidence))


def analyze(model: RiskModel, indicator_values: Mapping[str, Mapping[str, object]] | None = None,
            feature_probabilities: Mapping[str, float] | None = None,
            evidence: tuple[str, ...] = ()) -> RiskReport:
    """Full analysis of a model.

    Each event's likelihood is its model likelihood scaled by the strongest
    activation among the situations exposing it. Indicators without a
    supplied value are taken to hold; feature probabilities default to 1.
    """
    indicator_values = indicator_values or {}
    feature_probabilities = feature_probabilities or {}
    activation: dict[str, float] = {}
    for s in model.situations:
        values = {ind.name: True for ind in s.indicators}
        values.update(indicator_values.get(s.name, {}))
        activation[s.name] = assess_situation(s, values, feature_probabilities.get(s.name, 1.0)).activation
    likelihoods = {}
    for e in model.events:
        exposing = model.exposing_situations(e.name)
        a = max((activation[s] for s in exposing if s in activation), default=0.0)
        likelihoods[e.name] = event_likelihood(a, e.likelihood)
    return propagate(model, likelihoods, evidence)


def report_to_dict(report: RiskReport) -> dict:
    return {
        "model": report.model,
        "events": [
            {"name": e.name, "likelihood": e.likelihood, "severity": e.severity, "exposure": e.exposure}
            for e in sorted(report.events, key=lambda e: e.name)
        ],
        "goals": [{"name": g.name, "satisfaction": g.satisfaction} for g in sorted(report.goals, key=lambda g: g.name)],
        "evidence": sorted(report.evidence),
    }


def report_from_dict(data: dict) -> RiskReport:
    try:
        events = tuple(EventRisk(e["name"], float(e["likelihood"]), float(e["severity"])) for e in data["events"])
        goals = tuple(GoalSatisfaction(g["name"], float(g["satisfaction"])) for g in data["goals"])
        return RiskReport(data["model"], events, goals, tuple(data["evidence"]))
    except (KeyError, TypeError) as exc:
        raise AnalysisError(f"malformed report: {exc}") from exc


def render_report(report: RiskReport, format: str = "json") -> bytes:
    data = report_to_dict(report)
    if format == "json":
        return (json.dumps(data, indent=2, ensure_ascii=False) + "\n").encode("utf-8")
    if format != "text":
        raise AnalysisError(f"unknown report format {format!r}")
    width = max([len(x["name"]) for x in data["events"] + data["goals"]] + [12])
    lines = [f"risk report: {data['model']}", "", "events"]
    lines.append(f"  {'name':<{width}}  {'likelihood':>10}  {'severity':>10}  {'exposure':>10}")
    for e in data["events"]:
        lines.append(f"  {e['name']:<{width}}  {e['likelihood']:>10.6f}  {e['severity']:>10.6f}  {e['exposure']:>10.6f}")
    lines += ["", "goals", f"  {'name':<{width}}  {'satisfaction':>12}"]
    for g in data["goals"]:
        lines.append(f"  {g['name']:<{width}}  {g['satisfaction']:>12.6f}")
    lines += ["", "evidence"]
    lines += [f"  {src}" for src in data["evidence"]] or ["  (none)"]
    return ("\n".join(lines) + "\n").encode("utf-8")
