"""Scenario configuration for the collaborative cell simulator.

A scenario fixes everything about an episode except the sampled environment
configuration: cell geometry, safety-monitor parameters, perception model,
integration step and episode length, and the mapping from model feature
names to simulator inputs. Scenarios live in JSON files; see the README for
the documented keys.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

# Simulator inputs every EnvConfig must cover.
SIM_INPUTS = ("human_speed", "robot_speed", "luminance")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class SafetyParams:
    """Speed-and-separation monitoring constants (seconds, metres, m/s^2)."""

    reaction_time: float = 0.1
    stop_time: float = 0.2
    decel: float = 3.0
    intrusion_margin: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ScenarioError(f"safety parameter {f.name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class PerceptionParams:
    """Luminance-dependent detection probability of the human operator."""

    l_mid: float = 200.0
    k: float = 1.5
    p_min: float = 0.5
    p_max: float = 0.99
    # camera frame period (s); the monitor's view only changes on frames
    frame_period: float = 0.2

    def __post_init__(self):
        if not (0.0 <= self.p_min <= self.p_max <= 1.0):
            raise ScenarioError("perception requires 0 <= p_min <= p_max <= 1")
        if not (self.l_mid > 0 and self.k > 0):
            raise ScenarioError("perception requires l_mid > 0 and k > 0")
        if not self.frame_period > 0:
            raise ScenarioError("perception frame_period must be positive")


@dataclass(frozen=True)
class Scenario:
    name: str = "cell"
    workspace: tuple[float, float] = (4.0, 3.0)
    # closed pick-place loop of the end-effector, plan view
    robot_path: tuple[tuple[float, float], ...] = ((1.2, 0.6), (2.8, 0.6), (2.8, 1.4), (1.2, 1.4))
    # operator walks back and forth along this polyline
    human_path: tuple[tuple[float, float], ...] = ((0.4, 2.7), (2.0, 2.25), (3.6, 2.7))
    safety: SafetyParams = field(default_factory=SafetyParams)
    perception: PerceptionParams = field(default_factory=PerceptionParams)
    # human speed assumed by the monitor when sizing the safety zone
    human_speed_max: float = 2.0
    # extra distance at which the controller starts braking
    warning_margin: float = 0.3
    accel: float = 3.0
    step: float = 0.01
    duration: float = 20.0
    bounds: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {
            "human_speed": (0.0, 2.0),
            "robot_speed": (0.5, 2.0),
            "luminance": (50.0, 1000.0),
        }
    )
    # values used for simulator inputs the searched situation does not vary
    defaults: dict[str, float] = field(
        default_factory=lambda: {"human_speed": 1.0, "robot_speed": 1.0, "luminance": 500.0}
    )
    # model feature name -> simulator input
    features: dict[str, str] = field(
        default_factory=lambda: {
            "speed of the human motion": "human_speed",
            "speed of the robot motion": "robot_speed",
            "luminance of the working area": "luminance",
        }
    )
    # per discrete feature: category label -> numeric simulator value
    levels: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        w, h = self.workspace
        if not (w > 0 and h > 0):
            raise ScenarioError("workspace dimensions must be positive")
        for label, path, minimum in (("robot_path", self.robot_path, 3), ("human_path", self.human_path, 1)):
            if len(path) < minimum:
                raise ScenarioError(f"{label} needs at least {minimum} waypoints")
            for x, y in path:
                if not (0.0 <= x <= w and 0.0 <= y <= h):
                    raise ScenarioError(f"{label} waypoint ({x}, {y}) outside the workspace")
        if not (self.step > 0 and self.duration > 0):
            raise ScenarioError("step and duration must be positive")
        if self.perception.frame_period < self.step:
            raise ScenarioError("perception frame_period must be at least one step")
        if self.human_speed_max < 0 or self.warning_margin < 0 or self.accel <= 0:
            raise ScenarioError("human_speed_max and warning_margin must be >= 0, accel > 0")
        for key in SIM_INPUTS:
            if key not in self.bounds or key not in self.defaults:
                raise ScenarioError(f"scenario must declare bounds and a default for {key!r}")
            lo, hi = self.bounds[key]
            if not lo <= self.defaults[key] <= hi:
                raise ScenarioError(f"default {key}={self.defaults[key]} outside bounds [{lo}, {hi}]")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.step))

    @property
    def frame_stride(self) -> int:
        return max(1, int(round(self.perception.frame_period / self.step)))

    def with_perfect_perception(self) -> Scenario:
        return replace(self, perception=replace(self.perception, p_min=1.0, p_max=1.0))


def _pairs(points) -> tuple[tuple[float, float], ...]:
    return tuple((float(x), float(y)) for x, y in points)


def scenario_from_dict(data: dict[str, Any]) -> Scenario:
    known = {f.name for f in fields(Scenario)}
    unknown = set(data) - known
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    base = Scenario()
    for key, value in data.items():
        if key == "safety":
            kwargs[key] = SafetyParams(**value)
        elif key == "perception":
            kwargs[key] = PerceptionParams(**value)
        elif key in ("robot_path", "human_path"):
            kwargs[key] = _pairs(value)
        elif key == "workspace":
            kwargs[key] = (float(value[0]), float(value[1]))
        elif key == "bounds":
            merged = dict(base.bounds)
            merged.update({k: (float(v[0]), float(v[1])) for k, v in value.items()})
            kwargs[key] = merged
        elif key == "defaults":
            merged = dict(base.defaults)
            merged.update({k: float(v) for k, v in value.items()})
            kwargs[key] = merged
        elif key == "features":
            merged = dict(base.features)
            merged.update(value)
            kwargs[key] = merged
        elif key == "levels":
            kwargs[key] = {k: {c: float(x) for c, x in v.items()} for k, v in value.items()}
        elif key == "name":
            kwargs[key] = str(value)
        else:
            kwargs[key] = float(value)
    try:
        return Scenario(**kwargs)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from exc


def scenario_to_dict(scenario: Scenario) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in fields(scenario):
        value = getattr(scenario, f.name)
        if isinstance(value, (SafetyParams, PerceptionParams)):
            value = {g.name: getattr(value, g.name) for g in fields(value)}
        elif isinstance(value, tuple):
            value = [list(p) if isinstance(p, tuple) else p for p in value]
        elif isinstance(value, dict):
            value = {k: list(v) if isinstance(v, tuple) else v for k, v in value.items()}
        out[f.name] = value
    return out


def load_scenario(path: str | Path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    return scenario_from_dict(data)


def bundled_path(name: str) -> Path:
    """Filesystem path of a file shipped in ``riskloop/data``."""
    return Path(str(resources.files("riskloop") / "data" / name))


def bundled_scenario(name: str = "cell") -> Scenario:
    return load_scenario(bundled_path(f"{name}.json"))
