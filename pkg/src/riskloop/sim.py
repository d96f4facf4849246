"""Kinematic plan-view simulator of the human-robot collaborative cell.

The robot end-effector loops over a pick-place rectangle above the conveyor
while the operator walks back and forth along a waypoint path. A
speed-and-separation monitor sizes a protective zone from the robot's
instantaneous speed; the controller brakes when the *perceived* human is
inside the zone plus a warning margin. Perception misses (more frequent at
low luminance) leave the monitor with a stale human position.

Episodes are vectorised over a batch axis. Only IEEE-exact operations
(+, -, *, /, sqrt, comparisons) touch per-step state, so an episode produces
bit-identical results whether it runs alone or inside any batch.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from riskloop.scenario import SIM_INPUTS, PerceptionParams, SafetyParams, Scenario

SYMBOLIC_BOUNDS = ("safety_distance",)
TRACE_COLUMNS = (
    "time",
    "human_x",
    "human_y",
    "robot_x",
    "robot_y",
    "robot_speed",
    "safety_zone_radius",
    "separation",
    "perception_detected",
)


class SimulationError(ValueError):
    pass


def metric_registry() -> list[str]:
    """Names of the summary metrics every trace publishes."""
    return ["min_separation", "detection_rate", "violation_time"]


def protective_distance(robot_speed, human_speed_max, params: SafetyParams = SafetyParams()):
    """Protective separation distance for the given speeds.

    Reaction and stopping window at the assumed human speed, robot travel
    during the reaction time, braking distance, and the intrusion margin.
    Works elementwise on arrays.
    """
    if np.ndim(robot_speed) == 0 and np.ndim(human_speed_max) == 0:
        if not (math.isfinite(robot_speed) and math.isfinite(human_speed_max)):
            raise SimulationError("speeds must be finite")
        if robot_speed < 0 or human_speed_max < 0:
            raise SimulationError("speeds must be non-negative")
    window = params.reaction_time + params.stop_time
    return (
        human_speed_max * window
        + robot_speed * params.reaction_time
        + robot_speed * robot_speed / (2.0 * params.decel)
        + params.intrusion_margin
    )


def detection_probability(luminance: float, perception: PerceptionParams = PerceptionParams()) -> float:
    z = perception.k * (math.log(luminance) - math.log(perception.l_mid))
    sig = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    return perception.p_min + (perception.p_max - perception.p_min) * sig


def perceive(true_position, luminance, rng: np.random.Generator, last_detection=None,
             perception: PerceptionParams = PerceptionParams()):
    """One perception draw. Returns ``(detected, reported_position)``.

    On a miss the reported position is ``last_detection`` (``None`` when the
    human has never been seen).
    """
    if luminance <= 0:
        raise SimulationError("luminance must be positive")
    detected = bool(rng.random() < detection_probability(luminance, perception))
    if detected:
        return True, tuple(true_position)
    return False, last_detection


@dataclass(frozen=True)
class EnvConfig:
    """Concrete simulator inputs for one episode plus its random seed."""

    values: Mapping[str, float]
    seed: int = 0

    def __post_init__(self):
        missing = [k for k in SIM_INPUTS if k not in self.values]
        if missing:
            raise SimulationError(f"EnvConfig missing {missing}")
        if not (isinstance(self.seed, (int, np.integer)) and self.seed >= 0):
            raise SimulationError("seed must be a non-negative integer")

    def __getitem__(self, key: str) -> float:
        return self.values[key]


@dataclass(frozen=True)
class TraceSummary:
    min_separation: float
    violation_time: float | None
    detection_rate: float
    # min / max over steps of separation - safety_zone_radius
    min_margin: float
    max_margin: float

    @property
    def violated(self) -> bool:
        return self.violation_time is not None

    def metrics(self) -> dict[str, float | None]:
        return {
            "min_separation": self.min_separation,
            "detection_rate": self.detection_rate,
            "violation_time": self.violation_time,
        }


@dataclass(frozen=True, eq=False)
class SimTrace:
    time: np.ndarray
    human_pos: np.ndarray  # (n, 2)
    robot_pos: np.ndarray  # (n, 2)
    robot_speed: np.ndarray
    safety_zone_radius: np.ndarray
    separation: np.ndarray
    perception_detected: np.ndarray
    summary: TraceSummary
    config: EnvConfig | None = field(default=None)

    # summary metrics are reachable directly from the trace
    @property
    def min_separation(self) -> float:
        return self.summary.min_separation

    @property
    def violation_time(self) -> float | None:
        return self.summary.violation_time

    @property
    def detection_rate(self) -> float:
        return self.summary.detection_rate

    @property
    def min_margin(self) -> float:
        return self.summary.min_margin

    @property
    def max_margin(self) -> float:
        return self.summary.max_margin

    def metrics(self):
        return self.summary.metrics()

    def identical(self, other: SimTrace) -> bool:
        """Bit-level equality of every column and summary value."""
        arrays = ("time", "human_pos", "robot_pos", "robot_speed", "safety_zone_radius",
                  "separation", "perception_detected")
        for name in arrays:
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return self.summary == other.summary

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for i in range(len(self.time)):
            writer.writerow([
                repr(float(self.time[i])),
                repr(float(self.human_pos[i, 0])),
                repr(float(self.human_pos[i, 1])),
                repr(float(self.robot_pos[i, 0])),
                repr(float(self.robot_pos[i, 1])),
                repr(float(self.robot_speed[i])),
                repr(float(self.safety_zone_radius[i])),
                repr(float(self.separation[i])),
                int(self.perception_detected[i]),
            ])
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.metrics(), sort_keys=True, indent=2)


class _Polyline:
    """Arc-length parametrisation of a polyline (closed or ping-pong)."""

    def __init__(self, points, closed: bool):
        pts = np.asarray(points, dtype=float)
        if closed:
            pts = np.vstack([pts, pts[:1]])
        self.start = pts[:-1]
        self.delta = pts[1:] - pts[:-1]
        self.lengths = np.sqrt((self.delta**2).sum(axis=1))
        self.cum = np.concatenate([[0.0], np.cumsum(self.lengths)])
        self.total = float(self.cum[-1])
        self.closed = closed
        self.first = pts[0]

    def at(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.total == 0.0:
            return np.full(s.shape, self.first[0]), np.full(s.shape, self.first[1])
        if self.closed:
            u = np.mod(s, self.total)
        else:
            u = np.mod(s, 2.0 * self.total)
            u = np.where(u > self.total, 2.0 * self.total - u, u)
        idx = np.searchsorted(self.cum, u, side="right") - 1
        idx = np.clip(idx, 0, len(self.lengths) - 1)
        frac = (u - self.cum[idx]) / self.lengths[idx]
        x = self.start[idx, 0] + frac * self.delta[idx, 0]
        y = self.start[idx, 1] + frac * self.delta[idx, 1]
        return x, y


def check_config(config: EnvConfig, scenario: Scenario) -> None:
    for key in SIM_INPUTS:
        value = config.values[key]
        lo, hi = scenario.bounds[key]
        if not (math.isfinite(value) and lo <= value <= hi):
            raise SimulationError(f"{key}={value} outside declared domain [{lo}, {hi}]")


def _episode_uniforms(seed: int, n_steps: int) -> np.ndarray:
    return np.random.default_rng(int(seed)).random(n_steps)


def simulate_batch(configs: Sequence[EnvConfig], scenario: Scenario, record: bool = False):
    """Run one episode per config. Returns a list of SimTrace when ``record``,
    otherwise a list of TraceSummary."""
    n = len(configs)
    if n == 0:
        return []
    for cfg in configs:
        check_config(cfg, scenario)
    steps = scenario.n_steps
    dt = scenario.step
    safety = scenario.safety

    human_speed = np.array([c["human_speed"] for c in configs], dtype=float)
    v_nom = np.array([c["robot_speed"] for c in configs], dtype=float)
    p_detect = np.array([detection_probability(c["luminance"], scenario.perception) for c in configs])
    stride = scenario.frame_stride
    n_frames = (steps + stride - 1) // stride
    uniforms = np.stack([_episode_uniforms(c.seed, n_frames) for c in configs])

    human_path = _Polyline(scenario.human_path, closed=False)
    robot_path = _Polyline(scenario.robot_path, closed=True)

    h_max = scenario.human_speed_max
    brake = safety.decel * dt
    speedup = scenario.accel * dt
    margin = scenario.warning_margin

    v = v_nom.copy()
    s_robot = np.zeros(n)
    last_x, last_y = human_path.at(np.zeros(n))

    min_sep = np.full(n, np.inf)
    min_margin = np.full(n, np.inf)
    max_margin = np.full(n, -np.inf)
    first_violation = np.full(n, -1, dtype=np.int64)
    detections = np.zeros(n, dtype=np.int64)
    frames = 0
    detected = np.ones(n, dtype=bool)

    if record:
        rec = {name: np.empty((n, steps)) for name in
               ("hx", "hy", "rx", "ry", "v", "zone", "sep")}
        rec_det = np.empty((n, steps), dtype=bool)

    for k in range(steps):
        t = k * dt
        hx, hy = human_path.at(human_speed * t)
        rx, ry = robot_path.at(s_robot)
        if k % stride == 0:
            detected = uniforms[:, k // stride] < p_detect
            last_x = np.where(detected, hx, last_x)
            last_y = np.where(detected, hy, last_y)
            frames += 1
            detections += detected

        zone = protective_distance(v, h_max, safety)
        dx, dy = hx - rx, hy - ry
        sep = np.sqrt(dx * dx + dy * dy)
        px, py = last_x - rx, last_y - ry
        perceived = np.sqrt(px * px + py * py)

        gap = sep - zone
        np.minimum(min_sep, sep, out=min_sep)
        np.minimum(min_margin, gap, out=min_margin)
        np.maximum(max_margin, gap, out=max_margin)
        fresh = (gap < 0) & (first_violation < 0)
        first_violation[fresh] = k

        if record:
            rec["hx"][:, k], rec["hy"][:, k] = hx, hy
            rec["rx"][:, k], rec["ry"][:, k] = rx, ry
            rec["v"][:, k], rec["zone"][:, k], rec["sep"][:, k] = v, zone, sep
            rec_det[:, k] = detected

        slow = perceived < zone + margin
        v = np.where(slow, np.maximum(v - brake, 0.0), np.minimum(v + speedup, v_nom))
        s_robot = s_robot + v * dt

    summaries = []
    for i in range(n):
        vt = None if first_violation[i] < 0 else int(first_violation[i]) * dt
        summaries.append(TraceSummary(
            min_separation=float(min_sep[i]),
            violation_time=vt,
            detection_rate=float(detections[i]) / frames,
            min_margin=float(min_margin[i]),
            max_margin=float(max_margin[i]),
        ))
    if not record:
        return summaries

    time = np.arange(steps) * dt
    traces = []
    for i in range(n):
        traces.append(SimTrace(
            time=time.copy(),
            human_pos=np.column_stack([rec["hx"][i], rec["hy"][i]]),
            robot_pos=np.column_stack([rec["rx"][i], rec["ry"][i]]),
            robot_speed=rec["v"][i].copy(),
            safety_zone_radius=rec["zone"][i].copy(),
            separation=rec["sep"][i].copy(),
            perception_detected=rec_det[i].copy(),
            summary=summaries[i],
            config=configs[i],
        ))
    return traces


def run_episode(config: EnvConfig, scenario: Scenario = Scenario(), duration: float | None = None,
                step: float | None = None, params: SafetyParams | None = None) -> SimTrace:
    """Simulate one episode and return its full trace.

    ``duration``, ``step`` and ``params`` override the scenario's values.
    """
    from dataclasses import replace

    overrides = {}
    if duration is not None:
        overrides["duration"] = duration
    if step is not None:
        overrides["step"] = step
    if params is not None:
        overrides["safety"] = params
    if overrides:
        scenario = replace(scenario, **overrides)
    return simulate_batch([config], scenario, record=True)[0]
