"""Hypothesis generators for valid risk models."""

from hypothesis import strategies as st

from riskloop.model import (
    Constraint,
    DomainFeature,
    Event,
    Goal,
    Indicator,
    Relation,
    RiskModel,
    Situation,
)

# includes characters the serializer has to escape
names = st.text(
    alphabet=st.characters(codec="utf-8", exclude_categories=("Cs", "Cc")) | st.sampled_from('"\\\n\t'),
    min_size=1,
    max_size=12,
)
finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6)
unit_interval = st.floats(min_value=0.0, max_value=1.0)
units = st.none() | st.sampled_from(["m/s", "lux", "m", "µm", "°C"])
comparators = st.sampled_from(["<", "<=", ">", ">="])


@st.composite
def indicators(draw, name):
    if draw(st.booleans()):
        return Indicator(name)
    return Indicator(name, "threshold", draw(comparators), draw(finite), draw(units))


@st.composite
def features(draw, name):
    if draw(st.booleans()):
        lo = draw(finite)
        hi = draw(finite.filter(lambda h: h > lo))
        return DomainFeature(name, "continuous", lo, hi, draw(units))
    cats = draw(st.lists(names, min_size=1, max_size=4, unique=True))
    return DomainFeature(name, "discrete", categories=tuple(cats))


@st.composite
def constraints(draw):
    metric = draw(st.sampled_from(["min_separation", "detection_rate", "violation_time"]))
    if metric == "min_separation" and draw(st.booleans()):
        return Constraint(metric, draw(comparators), "safety_distance")
    return Constraint(metric, draw(comparators), draw(finite), draw(units))


@st.composite
def models(draw, max_elements=5):
    n_sit = draw(st.integers(1, max_elements))
    n_ev = draw(st.integers(0, max_elements))
    n_goal = draw(st.integers(0, max_elements))
    pool = draw(st.lists(names, min_size=n_sit + n_ev + n_goal, max_size=n_sit + n_ev + n_goal, unique=True))
    s_names, e_names, g_names = pool[:n_sit], pool[n_sit:n_sit + n_ev], pool[n_sit + n_ev:]

    situations = []
    for s in s_names:
        ind_names = draw(st.lists(names, max_size=3, unique=True))
        feat_names = draw(st.lists(names, min_size=0 if ind_names else 1, max_size=3, unique=True))
        situations.append(Situation(
            s,
            tuple(draw(indicators(n)) for n in ind_names),
            tuple(draw(features(n)) for n in feat_names),
        ))

    relations = []
    for e in e_names:
        for s in draw(st.lists(st.sampled_from(s_names), min_size=1, max_size=2, unique=True)):
            relations.append(Relation("exposes", s, e))
    events = [Event(e, draw(constraints()), draw(unit_interval),
                    draw(st.none() | names)) for e in e_names]
    if g_names:
        for e in e_names:
            for g in draw(st.lists(st.sampled_from(g_names), max_size=2, unique=True)):
                relations.append(Relation("impacts", e, g, draw(unit_interval)))

    # goal i may refine any goal j < i, so refinement is acyclic
    parent = {}
    for i in range(1, n_goal):
        j = draw(st.none() | st.integers(0, i - 1))
        if j is not None:
            parent[g_names[i]] = g_names[j]
            relations.append(Relation("refines", g_names[i], g_names[j]))
    goals = []
    for g in g_names:
        has_children = g in parent.values()
        goals.append(Goal(g, draw(st.sampled_from(["AND", "OR"])) if has_children else "leaf"))

    return RiskModel(draw(names), tuple(situations), tuple(events), tuple(goals), tuple(relations))


# -- plain seeded generator, for fixed-size batches --------------------------

_ALPHABET = list("abcxyz ÄéßλЖ光🙂-_\"\\\n\t0123456789")


def _name(rng, taken):
    while True:
        s = "".join(rng.choice(_ALPHABET, size=int(rng.integers(1, 10))))
        if s not in taken:
            taken.add(s)
            return s


def random_model(rng, max_elements=5) -> RiskModel:
    """A valid model drawn with a numpy Generator."""
    taken: set[str] = set()
    n_sit, n_ev, n_goal = (int(rng.integers(lo, max_elements + 1)) for lo in (1, 0, 0))
    s_names = [_name(rng, taken) for _ in range(n_sit)]
    e_names = [_name(rng, taken) for _ in range(n_ev)]
    g_names = [_name(rng, taken) for _ in range(n_goal)]
    unit = lambda: [None, "m/s", "lux", "°C"][int(rng.integers(4))]  # noqa: E731
    comp = lambda: ["<", "<=", ">", ">="][int(rng.integers(4))]  # noqa: E731

    situations = []
    for s in s_names:
        local: set[str] = set()
        inds = []
        for _ in range(int(rng.integers(0, 3))):
            n = _name(rng, local)
            inds.append(Indicator(n) if rng.random() < 0.5 else
                        Indicator(n, "threshold", comp(), float(rng.normal(0, 100)), unit()))
        feats = []
        for _ in range(int(rng.integers(0 if inds else 1, 3))):
            n = _name(rng, local)
            if rng.random() < 0.5:
                lo = float(rng.normal(0, 10))
                feats.append(DomainFeature(n, "continuous", lo, lo + float(rng.exponential(5)) + 1e-6, unit()))
            else:
                cats: set[str] = set()
                feats.append(DomainFeature(n, "discrete",
                                           categories=tuple(_name(rng, cats) for _ in range(int(rng.integers(1, 4))))))
        situations.append(Situation(s, tuple(inds), tuple(feats)))

    relations, events = [], []
    for e in e_names:
        for s in rng.choice(s_names, size=int(rng.integers(1, min(2, n_sit) + 1)), replace=False):
            relations.append(Relation("exposes", str(s), e))
        metric = ["min_separation", "detection_rate", "violation_time"][int(rng.integers(3))]
        if metric == "min_separation" and rng.random() < 0.5:
            c = Constraint(metric, comp(), "safety_distance")
        else:
            c = Constraint(metric, comp(), float(rng.normal(0, 5)), unit())
        events.append(Event(e, c, float(rng.random()), None if rng.random() < 0.7 else _name(rng, set())))
        if g_names:
            for g in rng.choice(g_names, size=int(rng.integers(0, min(2, n_goal) + 1)), replace=False):
                relations.append(Relation("impacts", e, str(g), float(rng.random())))
    parents = set()
    for i in range(1, n_goal):
        if rng.random() < 0.7:
            j = int(rng.integers(0, i))
            parents.add(g_names[j])
            relations.append(Relation("refines", g_names[i], g_names[j]))
    goals = [Goal(g, ["AND", "OR"][int(rng.integers(2))] if g in parents else "leaf") for g in g_names]
    return RiskModel(_name(rng, set()), tuple(situations), tuple(events), tuple(goals), tuple(relations))
