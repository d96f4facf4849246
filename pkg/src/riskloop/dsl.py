"""Concrete syntax for risk models (``.rkml`` files).

Block-structured and keyword-led::

    model "cell" {
      situation "close interaction" {
        indicator "human and robot in the shared space" : boolean
        feature "speed of the human motion" : continuous [0.0, 2.0] "m/s"
        exposes "insufficient distance"
      }
      event "insufficient distance" {
        constraint : min_separation < safety_distance
        likelihood 0.5
        impacts "contact does not happen" severity 1.0
      }
      goal "contact does not happen" { refines "Successful collaboration" }
      goal "Successful collaboration" { AND }
    }

``#`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from riskloop.model import (
    COMPARATORS,
    STRUCTURAL_CODES,
    Constraint,
    Diagnostic,
    DomainFeature,
    Event,
    Goal,
    Indicator,
    ModelError,
    Relation,
    RiskModel,
    Severity,
    Situation,
    validate,
)


class ParseError(ModelError):
    def __init__(self, message: str, line: int, column: int):
        self.line, self.column = line, column
        diag = Diagnostic(Severity.ERROR, "syntax", f"{message} (column {column})", None, line)
        super().__init__([diag])


@dataclass(frozen=True)
class Token:
    kind: str  # STRING NUMBER IDENT OP EOF
    value: object
    line: int
    column: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<op><=|>=|[<>{}\[\]:,])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)
_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}


def _unquote(raw: str, line: int, column: int) -> str:
    out, i = [], 1
    while i < len(raw) - 1:
        ch = raw[i]
        if ch == "\\":
            nxt = raw[i + 1]
            if nxt not in _ESCAPES:
                raise ParseError(f"unknown escape \\{nxt}", line, column + i)
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        column = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, column)
        kind = m.lastgroup
        raw = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "string":
            tokens.append(Token("STRING", _unquote(raw, line, column), line, column))
        elif kind == "number":
            tokens.append(Token("NUMBER", float(raw), line, column))
        elif kind == "op":
            tokens.append(Token("OP", raw, line, column))
        elif kind == "ident":
            tokens.append(Token("IDENT", raw, line, column))
        pos = m.end()
    tokens.append(Token("EOF", None, line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.locations: dict[tuple, int] = {}

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def fail(self, expected: str):
        t = self.tok
        found = "end of input" if t.kind == "EOF" else repr(t.value)
        raise ParseError(f"expected {expected}, found {found}", t.line, t.column)

    def at(self, kind, value=None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def accept(self, kind, value=None):
        if self.at(kind, value):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, kind, value=None, what=None) -> Token:
        t = self.accept(kind, value)
        if t is None:
            self.fail(what or (repr(value) if value is not None else kind.lower()))
        return t

    def comparator(self) -> str:
        t = self.tok
        if t.kind == "OP" and t.value in COMPARATORS:
            self.i += 1
            return t.value
        self.fail("comparator")

    def model(self) -> RiskModel:
        self.expect("IDENT", "model")
        name = self.expect("STRING", what="model name").value
        self.expect("OP", "{")
        situations, events, goals = [], [], []
        exposes, impacts, refines = [], [], []
        while not self.accept("OP", "}"):
            if self.at("IDENT", "situation"):
                s, rels = self.situation()
                situations.append(s)
                exposes += rels
            elif self.at("IDENT", "event"):
                e, rels = self.event()
                events.append(e)
                impacts += rels
            elif self.at("IDENT", "goal"):
                g, rels = self.goal()
                goals.append(g)
                refines += rels
            else:
                self.fail("'situation', 'event', 'goal' or '}'")
        self.expect("EOF", what="end of input")
        return RiskModel(name, tuple(situations), tuple(events), tuple(goals),
                         tuple(exposes + impacts + refines))

    def situation(self):
        head = self.expect("IDENT", "situation")
        name = self.expect("STRING", what="situation name").value
        self.locations[("situation", name)] = head.line
        self.expect("OP", "{")
        indicators, features, rels = [], [], []
        while not self.accept("OP", "}"):
            t = self.tok
            if self.accept("IDENT", "indicator"):
                ind_name = self.expect("STRING", what="indicator name").value
                self.expect("OP", ":")
                if self.accept("IDENT", "boolean"):
                    ind = Indicator(ind_name)
                else:
                    comp = self.comparator()
                    bound = self.expect("NUMBER", what="threshold bound").value
                    unit = self.unit()
                    ind = Indicator(ind_name, "threshold", comp, bound, unit)
                indicators.append(ind)
                self.locations[("indicator", name, ind_name)] = t.line
            elif self.accept("IDENT", "feature"):
                feat_name = self.expect("STRING", what="feature name").value
                self.expect("OP", ":")
                if self.accept("IDENT", "continuous"):
                    self.expect("OP", "[")
                    lo = self.expect("NUMBER", what="lower bound").value
                    self.expect("OP", ",")
                    hi = self.expect("NUMBER", what="upper bound").value
                    self.expect("OP", "]")
                    feat = DomainFeature(feat_name, "continuous", lo, hi, self.unit())
                elif self.accept("IDENT", "discrete"):
                    self.expect("OP", "{")
                    cats = [self.expect("STRING", what="category").value]
                    while self.accept("OP", ","):
                        cats.append(self.expect("STRING", what="category").value)
                    self.expect("OP", "}")
                    feat = DomainFeature(feat_name, "discrete", categories=tuple(cats))
                else:
                    self.fail("'continuous' or 'discrete'")
                features.append(feat)
                self.locations[("feature", name, feat_name)] = t.line
            elif self.accept("IDENT", "exposes"):
                target = self.expect("STRING", what="event name").value
                rels.append(Relation("exposes", name, target))
                self.locations[("relation", "exposes", name, target)] = t.line
            else:
                self.fail("'indicator', 'feature', 'exposes' or '}'")
        return Situation(name, tuple(indicators), tuple(features)), rels

    def unit(self):
        t = self.accept("STRING")
        return t.value if t else None

    def event(self):
        head = self.expect("IDENT", "event")
        name = self.expect("STRING", what="event name").value
        self.locations[("event", name)] = head.line
        self.expect("OP", "{")
        self.expect("IDENT", "constraint")
        self.expect("OP", ":")
        metric = self.expect("IDENT", what="metric name").value
        comp = self.comparator()
        literal = self.accept("NUMBER")
        if literal is not None:
            constraint = Constraint(metric, comp, literal.value, self.unit())
        else:
            symbol = self.expect("IDENT", what="number or symbolic bound").value
            constraint = Constraint(metric, comp, symbol)
        likelihood, evidence = 0.5, None
        if self.accept("IDENT", "likelihood"):
            likelihood = self.expect("NUMBER", what="likelihood").value
        if self.accept("IDENT", "evidence"):
            evidence = self.expect("STRING", what="evidence id").value
        rels = []
        while True:
            t = self.accept("IDENT", "impacts")
            if t is None:
                break
            goal = self.expect("STRING", what="goal name").value
            severity = 1.0
            if self.accept("IDENT", "severity"):
                severity = self.expect("NUMBER", what="severity").value
            rels.append(Relation("impacts", name, goal, severity))
            self.locations[("relation", "impacts", name, goal)] = t.line
        self.expect("OP", "}")
        return Event(name, constraint, likelihood, evidence), rels

    def goal(self):
        head = self.expect("IDENT", "goal")
        name = self.expect("STRING", what="goal name").value
        self.locations[("goal", name)] = head.line
        self.expect("OP", "{")
        rels = []
        t = self.accept("IDENT", "refines")
        if t is not None:
            parent = self.expect("STRING", what="parent goal name").value
            rels.append(Relation("refines", name, parent))
            self.locations[("relation", "refines", name, parent)] = t.line
        refinement = "leaf"
        for op in ("AND", "OR"):
            if self.accept("IDENT", op):
                refinement = op
                break
        self.expect("OP", "}")
        return Goal(name, refinement), rels


def parse_model(text: str) -> RiskModel:
    """Parse ``.rkml`` source.

    Raises :class:`ParseError` on syntax errors and :class:`ModelError` on
    duplicate names, unresolved references, or cyclic refinement. Other
    problems are left for :func:`riskloop.model.validate`.
    """
    model, _ = parse_with_locations(text)
    return model


def parse_with_locations(text: str) -> tuple[RiskModel, dict[tuple, int]]:
    parser = _Parser(text)
    model = parser.model()
    fatal = [d for d in validate(model, locations=parser.locations) if d.code in STRUCTURAL_CODES]
    if fatal:
        raise ModelError(fatal)
    return model, parser.locations


def validate_source(text: str) -> list[Diagnostic]:
    """Diagnostics for source text; syntax and structural errors included."""
    parser = _Parser(text)
    try:
        model = parser.model()
    except ModelError as exc:
        return exc.diagnostics
    return validate(model, locations=parser.locations)


def quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t") + '"'


def number(x: float) -> str:
    if not math.isfinite(x):
        # keeps the value parseable; validation still flags it
        return "1e999" if x > 0 else "-1e999"
    return repr(float(x))


def _unit(unit: str | None) -> str:
    return f" {quote(unit)}" if unit is not None else ""


def serialize_model(model: RiskModel) -> str:
    """Render a model as ``.rkml`` source. Relations are emitted inside the
    block of their source element."""
    lines = [f"model {quote(model.name)} {{"]
    for s in model.situations:
        lines.append(f"  situation {quote(s.name)} {{")
        for ind in s.indicators:
            if ind.kind == "boolean":
                lines.append(f"    indicator {quote(ind.name)} : boolean")
            else:
                lines.append(f"    indicator {quote(ind.name)} : {ind.comparator} {number(ind.bound)}{_unit(ind.unit)}")
        for f in s.features:
            if f.is_discrete:
                cats = ", ".join(quote(c) for c in f.categories)
                lines.append(f"    feature {quote(f.name)} : discrete {{ {cats} }}")
            else:
                lines.append(
                    f"    feature {quote(f.name)} : continuous [{number(f.lo)}, {number(f.hi)}]{_unit(f.unit)}")
        for r in model.relations:
            if r.kind == "exposes" and r.source == s.name:
                lines.append(f"    exposes {quote(r.target)}")
        lines.append("  }")
    for e in model.events:
        c = e.constraint
        bound = c.bound if c.symbolic else number(c.bound) + _unit(c.unit)
        lines.append(f"  event {quote(e.name)} {{")
        lines.append(f"    constraint : {c.metric} {c.comparator} {bound}")
        lines.append(f"    likelihood {number(e.likelihood)}")
        if e.evidence is not None:
            lines.append(f"    evidence {quote(e.evidence)}")
        for r in model.relations:
            if r.kind == "impacts" and r.source == e.name:
                lines.append(f"    impacts {quote(r.target)} severity {number(r.severity)}")
        lines.append("  }")
    for g in model.goals:
        parts = [f"refines {quote(r.target)}" for r in model.relations
                 if r.kind == "refines" and r.source == g.name]
        if g.refinement != "leaf":
            parts.append(g.refinement)
        body = " ".join(parts)
        lines.append(f"  goal {quote(g.name)} {{ {body} }}" if body else f"  goal {quote(g.name)} {{ }}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_model(path) -> RiskModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())
