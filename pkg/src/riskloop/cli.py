"""Command-line driver for the risk-driven assurance loop.

Exit codes: 0 success (no violation), 1 model validation errors,
2 usage / I/O / schema errors, 3 a violation was found.

Randomness: ``--seed S`` gives the falsification search seed S and the
Monte-Carlo violation-rate estimate seed S + 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

from riskloop.analysis import analyze, render_report
from riskloop.dsl import parse_with_locations, serialize_model
from riskloop.falsify import (
    STRATEGIES,
    FalsificationError,
    build_search_space,
    conditional_violation_prob,
    default_workers,
    falsify,
    result_from_dict,
    result_to_dict,
    summary_csv,
)
from riskloop.infill import (
    InfillError,
    apply_feedback,
    density_grid_csv,
    derive_evidence,
    evidence_from_dict,
    evidence_to_dict,
)
from riskloop.model import ModelError, Severity, errors, validate
from riskloop.scenario import ScenarioError, bundled_path, load_scenario
from riskloop.sim import EnvConfig, SimulationError, run_episode

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2, 3

FALSIFICATION_JSON = "falsification.json"
TRACE_SUMMARY_CSV = "trace_summary.csv"
EVIDENCE_JSON = "evidence.json"
DENSITY_GRID_CSV = "density_grid.csv"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
UPDATED_MODEL = "updated_model.rkml"
BUNDLED = ("sorting_cell.rkml", "cell.json", "violating.json", "fenced.json")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: Path
    scenario: Path
    situation: str | None
    event: str | None
    strategy: str = "evolutionary"
    budget: int = 500
    seed: int = 0
    alpha: float = 0.9
    grid: int = 50
    out: Path = Path("out")
    workers: int = 1
    early_stop: bool = False
    mc_samples: int = 2000

    def __post_init__(self):
        for p in (self.model, self.scenario):
            if not Path(p).is_file():
                raise UsageError(f"no such file: {p}")
        if self.budget < 1:
            raise UsageError("--budget must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise UsageError("--alpha must lie in (0, 1)")
        if self.grid < 2:
            raise UsageError("--grid must be at least 2")
        if self.mc_samples < 1:
            raise UsageError("--mc-samples must be at least 1")
        if self.strategy not in STRATEGIES:
            raise UsageError(f"--strategy must be one of {STRATEGIES}")


def write_atomic(path: Path, data: bytes | str) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(data) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def _read_text(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _load_model(path):
    """Parse and validate; raises ModelError on any ERROR diagnostic."""
    model, locations = parse_with_locations(_read_text(path))
    diagnostics = validate(model, locations=locations)
    for d in diagnostics:
        if d.severity is Severity.WARNING:
            print(f"{path}: {d}", file=sys.stderr)
    bad = errors(diagnostics)
    if bad:
        raise ModelError(bad)
    return model


def _pick_target(model, situation, event):
    if situation is None:
        situation = next((s.name for s in model.situations if s.features and model.exposed_events(s.name)), None)
        if situation is None:
            raise UsageError("model has no situation with features and exposed events; pass --situation")
    if event is None:
        exposed = model.exposed_events(situation)
        if not exposed:
            raise UsageError(f"situation {situation!r} exposes no events; pass --event")
        event = exposed[0]
    return situation, event


def cmd_validate(args) -> int:
    text = _read_text(args.model)
    try:
        model, locations = parse_with_locations(text)
    except ModelError as exc:
        for d in exc.diagnostics:
            print(f"{args.model}: {d}", file=sys.stderr)
        return EXIT_INVALID
    diagnostics = validate(model, locations=locations)
    for d in diagnostics:
        print(f"{args.model}: {d}", file=sys.stderr)
    return EXIT_INVALID if errors(diagnostics) else EXIT_OK


def _run_falsify(cfg: RunConfig, model, scenario):
    result = falsify(model, cfg.situation, cfg.event, cfg.budget, cfg.strategy, cfg.seed, scenario,
                     early_stop=cfg.early_stop, workers=cfg.workers)
    write_atomic(cfg.out / FALSIFICATION_JSON, _json(result_to_dict(result)))
    write_atomic(cfg.out / TRACE_SUMMARY_CSV, summary_csv(result))
    n_bad = len(result.violations)
    print(f"falsify: {result.budget_used} episodes, {n_bad} violating, best objective "
          f"{result.best.objective:.6g}", file=sys.stderr)
    return result


def _run_evidence(cfg: RunConfig, model, scenario, result):
    space = result.space
    rate = conditional_violation_prob(space, model, result.situation, result.event, cfg.mc_samples,
                                      cfg.seed + 1, scenario, cfg.workers)
    evidence, density = derive_evidence(result, rate, cfg.alpha, cfg.grid)
    write_atomic(cfg.out / EVIDENCE_JSON, _json(evidence_to_dict(evidence)))
    if density is not None:
        write_atomic(cfg.out / DENSITY_GRID_CSV, density_grid_csv(density, cfg.grid))
    print(f"evidence: violation rate {rate:.4f}, likelihood {evidence.likelihood:.4f}", file=sys.stderr)
    return evidence


def _run_analyze(model, evidence, out: Path):
    updated = apply_feedback(model, evidence.event, evidence)
    report = analyze(updated, evidence=(evidence.source,))
    write_atomic(out / UPDATED_MODEL, serialize_model(updated))
    write_atomic(out / REPORT_JSON, render_report(report, "json"))
    write_atomic(out / REPORT_TXT, render_report(report, "text"))
    return report


def _run_config(args) -> RunConfig:
    workers = args.workers if args.workers is not None else default_workers()
    return RunConfig(Path(args.model), Path(args.scenario), args.situation, args.event, args.strategy, args.budget,
                     args.seed, args.alpha, args.grid, Path(args.out), max(1, workers), args.early_stop,
                     args.mc_samples)


def cmd_falsify(args) -> int:
    cfg = _run_config(args)
    model = _load_model(cfg.model)
    scenario = load_scenario(cfg.scenario)
    situation, event = _pick_target(model, cfg.situation, cfg.event)
    cfg = replace(cfg, situation=situation, event=event)
    result = _run_falsify(cfg, model, scenario)
    return EXIT_VIOLATION if result.violations else EXIT_OK


def cmd_evidence(args) -> int:
    cfg = _run_config(args)
    model = _load_model(cfg.model)
    scenario = load_scenario(cfg.scenario)
    try:
        data = json.loads(_read_text(args.falsification))
        space = build_search_space(model, data["situation"])
    except (json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"malformed falsification result: {exc}") from exc
    result = result_from_dict(data, space, scenario)
    _run_evidence(cfg, model, scenario, result)
    return EXIT_OK


def cmd_analyze(args) -> int:
    model = _load_model(args.model)
    try:
        evidence = evidence_from_dict(json.loads(_read_text(args.evidence)))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.evidence}: {exc}") from exc
    _run_analyze(model, evidence, Path(args.out))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _run_config(args)
    model = _load_model(cfg.model)
    scenario = load_scenario(cfg.scenario)
    situation, event = _pick_target(model, cfg.situation, cfg.event)
    cfg = replace(cfg, situation=situation, event=event)
    result = _run_falsify(cfg, model, scenario)
    evidence = _run_evidence(cfg, model, scenario, result)
    report = _run_analyze(model, evidence, cfg.out)
    for g in sorted(report.goals, key=lambda g: g.name):
        print(f"  {g.name}: {g.satisfaction:.4f}", file=sys.stderr)
    return EXIT_VIOLATION if result.violations else EXIT_OK


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    values = dict(scenario.defaults)
    for key in ("human_speed", "robot_speed", "luminance"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    trace = run_episode(EnvConfig(values, args.seed), scenario)
    out = Path(args.out)
    write_atomic(out / "trace.csv", trace.to_csv())
    write_atomic(out / "summary.json", trace.summary_json() + "\n")
    return EXIT_VIOLATION if trace.violation_time is not None else EXIT_OK


def cmd_init(args) -> int:
    out = Path(args.out)
    for name in BUNDLED:
        write_atomic(out / name, bundled_path(name).read_bytes())
        print(out / name)
    return EXIT_OK


def _add_run_flags(p, *, search=True, evidence=True):
    p.add_argument("--model", required=True, help="risk model (.rkml)")
    p.add_argument("--scenario", required=True, help="scenario config (.json)")
    p.add_argument("--situation", help="situation whose features span the search space")
    p.add_argument("--event", help="event whose constraint is falsified")
    p.add_argument("--strategy", choices=STRATEGIES, default="evolutionary")
    p.add_argument("--budget", type=int, default=500, help="episodes for the search")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.9, help="HDR mass level")
    p.add_argument("--grid", type=int, default=50, help="HDR grid cells per dimension")
    p.add_argument("--mc-samples", type=int, default=2000, help="episodes for the violation-rate estimate")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel simulation processes (default: $RISKLOOP_WORKERS or CPU count)")
    p.add_argument("--early-stop", action="store_true", help="stop the search at the first violation")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskloop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a risk model")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("falsify", help="search for violating configurations")
    _add_run_flags(p)
    p.set_defaults(func=cmd_falsify)

    p = sub.add_parser("evidence", help="turn a falsification result into risk evidence")
    _add_run_flags(p)
    p.add_argument("--falsification", required=True, help="falsification.json from the falsify stage")
    p.set_defaults(func=cmd_evidence)

    p = sub.add_parser("analyze", help="apply evidence to a model and report goal satisfaction")
    p.add_argument("--model", required=True)
    p.add_argument("--evidence", required=True)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="falsify, derive evidence, update the model, report")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="simulate one episode and export its trace")
    p.add_argument("--scenario", required=True)
    p.add_argument("--human-speed", dest="human_speed", type=float)
    p.add_argument("--robot-speed", dest="robot_speed", type=float)
    p.add_argument("--luminance", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("init", help="copy the bundled model and scenarios into a directory")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_init)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ModelError as exc:
        for d in exc.diagnostics:
            print(f"{getattr(args, 'model', '')}: {d}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, ScenarioError, SimulationError, FalsificationError, InfillError, OSError) as exc:
        print(f"riskloop: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
