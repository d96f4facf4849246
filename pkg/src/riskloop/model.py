"""Extended RiskML metamodel: situations, events, goals, and their relations.

Models are immutable. Structural well-formedness is checked by
:func:`validate`, which returns diagnostics instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

COMPARATORS = ("<", "<=", ">", ">=")
REFINEMENTS = ("AND", "OR", "leaf")
RELATION_KINDS = ("exposes", "impacts", "refines")


class Severity(str, Enum):
    ERROR = "ERROR"
    WARNING = "WARNING"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: str
    message: str
    element: str | None = None
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        what = f" [{self.element}]" if self.element else ""
        return f"{self.severity.value}: {where}{self.message}{what}"


class ModelError(ValueError):
    """Raised when a model cannot be built; carries the offending diagnostics."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Indicator:
    name: str
    kind: str = "boolean"  # "boolean" | "threshold"
    comparator: str | None = None
    bound: float | None = None
    unit: str | None = None

    def holds(self, value) -> bool:
        """Truth of the indicator for a supplied observation."""
        if self.kind == "boolean":
            return bool(value)
        if isinstance(value, bool):
            return value
        return compare(float(value), self.comparator, self.bound)


@dataclass(frozen=True)
class DomainFeature:
    name: str
    kind: str = "continuous"  # "continuous" | "discrete"
    lo: float | None = None
    hi: float | None = None
    unit: str | None = None
    categories: tuple[str, ...] = ()

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"


@dataclass(frozen=True)
class Situation:
    name: str
    indicators: tuple[Indicator, ...] = ()
    features: tuple[DomainFeature, ...] = ()

    def feature(self, name: str) -> DomainFeature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)


@dataclass(frozen=True)
class Constraint:
    """Violation condition ``metric comparator bound`` on a trace metric.

    ``bound`` is a literal number or a symbol resolved per time step by the
    simulator (``safety_distance``).
    """

    metric: str
    comparator: str
    bound: float | str
    unit: str | None = None

    @property
    def symbolic(self) -> bool:
        return isinstance(self.bound, str)


@dataclass(frozen=True)
class Event:
    name: str
    constraint: Constraint
    likelihood: float = 0.5
    # id of the evidence that last set the likelihood
    evidence: str | None = None


@dataclass(frozen=True)
class Goal:
    name: str
    refinement: str = "leaf"


@dataclass(frozen=True)
class Relation:
    kind: str
    source: str
    target: str
    severity: float | None = None  # impacts only

    def __post_init__(self):
        if self.kind == "impacts" and self.severity is None:
            object.__setattr__(self, "severity", 1.0)


@dataclass(frozen=True)
class RiskModel:
    name: str
    situations: tuple[Situation, ...] = ()
    events: tuple[Event, ...] = ()
    goals: tuple[Goal, ...] = ()
    relations: tuple[Relation, ...] = field(default=())

    def situation(self, name: str) -> Situation:
        return _lookup(self.situations, name, "situation")

    def event(self, name: str) -> Event:
        return _lookup(self.events, name, "event")

    def goal(self, name: str) -> Goal:
        return _lookup(self.goals, name, "goal")

    def relations_of(self, kind: str) -> list[Relation]:
        return [r for r in self.relations if r.kind == kind]

    def exposed_events(self, situation: str) -> list[str]:
        return [r.target for r in self.relations if r.kind == "exposes" and r.source == situation]

    def exposing_situations(self, event: str) -> list[str]:
        return [r.source for r in self.relations if r.kind == "exposes" and r.target == event]

    def impacts_on(self, goal: str) -> list[Relation]:
        return [r for r in self.relations if r.kind == "impacts" and r.target == goal]

    def impacts_of(self, event: str) -> list[Relation]:
        return [r for r in self.relations if r.kind == "impacts" and r.source == event]

    def children(self, goal: str) -> list[str]:
        return [r.source for r in self.relations if r.kind == "refines" and r.target == goal]

    def parent(self, goal: str) -> str | None:
        for r in self.relations:
            if r.kind == "refines" and r.source == goal:
                return r.target
        return None

    def impact_severity(self, event: str) -> float:
        """Largest severity among the event's impacts (1.0 when it impacts nothing)."""
        sev = [r.severity for r in self.impacts_of(event)]
        return max(sev) if sev else 1.0

    def canonical(self) -> RiskModel:
        """Same model with relations in block order: exposes by situation,
        impacts by event, refines by goal."""
        order: list[Relation] = []
        for s in self.situations:
            order += [r for r in self.relations if r.kind == "exposes" and r.source == s.name]
        for e in self.events:
            order += [r for r in self.relations if r.kind == "impacts" and r.source == e.name]
        for g in self.goals:
            order += [r for r in self.relations if r.kind == "refines" and r.source == g.name]
        rest = [r for r in self.relations if r not in order]
        return replace(self, relations=tuple(order + rest))

    def with_event(self, event: Event) -> RiskModel:
        self.event(event.name)
        events = tuple(event if e.name == event.name else e for e in self.events)
        return replace(self, events=events)


def structurally_equal(a: RiskModel, b: RiskModel) -> bool:
    return a.canonical() == b.canonical()


def _lookup(items, name, kind):
    for item in items:
        if item.name == name:
            return item
    raise KeyError(f"unknown {kind} {name!r}")


def compare(value: float, comparator: str, bound: float) -> bool:
    if comparator == "<":
        return value < bound
    if comparator == "<=":
        return value <= bound
    if comparator == ">":
        return value > bound
    if comparator == ">=":
        return value >= bound
    raise ValueError(f"unknown comparator {comparator!r}")


# Diagnostic codes parse_model refuses to build a model with.
STRUCTURAL_CODES = frozenset({"duplicate-name", "unresolved-reference", "cyclic-refinement"})


def validate(model: RiskModel, metrics: Iterable[str] | None = None,
             symbols: Iterable[str] | None = None,
             locations: Mapping[tuple, int] | None = None) -> list[Diagnostic]:
    """Check every structural invariant of ``model``.

    ``metrics`` and ``symbols`` default to what the simulator publishes.
    ``locations`` maps ``(kind, name[, detail])`` keys to source lines and is
    filled in by the parser.
    """
    if metrics is None or symbols is None:
        from riskloop.sim import SYMBOLIC_BOUNDS, metric_registry

        metrics = metric_registry() if metrics is None else metrics
        symbols = SYMBOLIC_BOUNDS if symbols is None else symbols
    metrics, symbols = set(metrics), set(symbols)
    locations = locations or {}
    out: list[Diagnostic] = []

    def err(code, message, element=None, key=None, severity=Severity.ERROR):
        out.append(Diagnostic(severity, code, message, element, locations.get(key)))

    for kind, items in (("situation", model.situations), ("event", model.events), ("goal", model.goals)):
        seen = set()
        for item in items:
            if item.name in seen:
                err("duplicate-name", f"duplicate {kind} name", item.name, (kind, item.name))
            seen.add(item.name)

    situations = {s.name for s in model.situations}
    events = {e.name for e in model.events}
    goals = {g.name for g in model.goals}

    for s in model.situations:
        if not s.indicators and not s.features:
            err("empty-situation", "situation has no indicators or features", s.name, ("situation", s.name))
        for label, members in (("indicator", s.indicators), ("feature", s.features)):
            seen = set()
            for m in members:
                if m.name in seen:
                    err("duplicate-name", f"duplicate {label} name in situation {s.name!r}", m.name,
                        (label, s.name, m.name))
                seen.add(m.name)
        for ind in s.indicators:
            key = ("indicator", s.name, ind.name)
            if ind.kind == "threshold":
                if ind.comparator not in COMPARATORS:
                    err("bad-comparator", f"unknown comparator {ind.comparator!r}", ind.name, key)
                if ind.bound is None or not math.isfinite(ind.bound):
                    err("non-finite-bound", "threshold indicator needs a finite bound", ind.name, key)
            elif ind.kind != "boolean":
                err("bad-kind", f"unknown indicator kind {ind.kind!r}", ind.name, key)
        for f in s.features:
            key = ("feature", s.name, f.name)
            if f.is_discrete:
                if not f.categories:
                    err("empty-domain", "discrete feature has no categories", f.name, key)
                elif len(set(f.categories)) != len(f.categories):
                    err("duplicate-name", "repeated category in discrete feature", f.name, key)
            elif f.kind == "continuous":
                if f.lo is None or f.hi is None or not (math.isfinite(f.lo) and math.isfinite(f.hi)):
                    err("empty-domain", "continuous feature needs finite bounds", f.name, key)
                elif not f.lo < f.hi:
                    err("empty-domain", f"continuous domain needs lo < hi, got [{f.lo}, {f.hi}]", f.name, key)
            else:
                err("bad-kind", f"unknown feature kind {f.kind!r}", f.name, key)

    for e in model.events:
        key = ("event", e.name)
        c = e.constraint
        if c.metric not in metrics:
            err("unknown-metric", f"constraint metric {c.metric!r} is not published by the simulator", e.name, key)
        if c.comparator not in COMPARATORS:
            err("bad-comparator", f"unknown comparator {c.comparator!r}", e.name, key)
        if c.symbolic:
            if c.bound not in symbols:
                err("unknown-symbol", f"unknown symbolic bound {c.bound!r}", e.name, key)
        elif not math.isfinite(c.bound):
            err("non-finite-bound", "constraint bound must be finite", e.name, key)
        if not (0.0 <= e.likelihood <= 1.0):
            err("out-of-range", f"likelihood {e.likelihood} outside [0, 1]", e.name, key)
        if not model.exposing_situations(e.name):
            err("event-not-exposed", "event not exposed by any situation", e.name, key)

    for r in model.relations:
        key = ("relation", r.kind, r.source, r.target)
        if r.kind == "exposes":
            ends = (("situation", r.source, situations), ("event", r.target, events))
        elif r.kind == "impacts":
            ends = (("event", r.source, events), ("goal", r.target, goals))
            if not (0.0 <= r.severity <= 1.0):
                err("out-of-range", f"impact severity {r.severity} outside [0, 1]", r.source, key)
        elif r.kind == "refines":
            ends = (("goal", r.source, goals), ("goal", r.target, goals))
        else:
            err("bad-kind", f"unknown relation kind {r.kind!r}", r.source, key)
            continue
        for kind, name, declared in ends:
            if name not in declared:
                err("unresolved-reference", f"{r.kind} refers to undeclared {kind} {name!r}", name, key)

    parents: dict[str, list[str]] = {}
    for r in model.relations_of("refines"):
        parents.setdefault(r.source, []).append(r.target)
    for g, ps in parents.items():
        if len(ps) > 1:
            err("multiple-parents", f"goal refines {len(ps)} parents", g, ("goal", g))
    for g in model.goals:
        if g.refinement not in REFINEMENTS:
            err("bad-kind", f"unknown refinement {g.refinement!r}", g.name, ("goal", g.name))
            continue
        n_children = len(model.children(g.name))
        if g.refinement == "leaf" and n_children:
            err("leaf-with-children", "leaf goal is refined by other goals", g.name, ("goal", g.name))
        if g.refinement != "leaf" and not n_children:
            err("missing-children", f"{g.refinement} goal has no refining goals", g.name, ("goal", g.name))

    for cycle in _refinement_cycles(model):
        err("cyclic-refinement", "cyclic refinement: " + " -> ".join(cycle), cycle[0], ("goal", cycle[0]))

    if not model.events:
        err("no-events", "no events", model.name, None, Severity.WARNING)
    return out


def _refinement_cycles(model: RiskModel) -> list[list[str]]:
    graph: dict[str, list[str]] = {}
    for r in model.relations_of("refines"):
        graph.setdefault(r.source, []).append(r.target)
    cycles, state = [], {}

    def visit(node, stack):
        state[node] = 1
        stack.append(node)
        for nxt in graph.get(node, ()):
            if state.get(nxt) == 1:
                cycles.append(stack[stack.index(nxt):] + [nxt])
            elif nxt not in state:
                visit(nxt, stack)
        stack.pop()
        state[node] = 2

    for node in sorted(graph):
        if node not in state:
            visit(node, [])
    return cycles


def errors(diagnostics: Iterable[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diagnostics if d.severity is Severity.ERROR]


def refinement_order(model: RiskModel) -> list[str]:
    """Goals ordered children-before-parents. Assumes an acyclic model."""
    done: list[str] = []
    seen: set[str] = set()

    def visit(name):
        if name in seen:
            return
        seen.add(name)
        for child in model.children(name):
            visit(child)
        done.append(name)

    for g in model.goals:
        visit(g.name)
    return done
