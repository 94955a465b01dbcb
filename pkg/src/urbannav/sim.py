"""Kinematic closed-loop evaluation on waypoint courses.

The agent is a unicycle. Every ``policy_period`` simulation steps the
policy sees the agent's last ``k`` policy-tick positions and the current
sub-goal (both in the agent frame, divided by the agent's step length);
its actions are scaled back to meters and a PD controller tracks one of
them until the next tick. A predicted arrival advances the sub-goal; at
the final sub-goal it ends the trial successfully only within
``success_radius`` of the target.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import yaml

from .config import SimConfig
from .errors import EmptyInput, ParseError, PolicyError
from .trajectory import Pose2, denormalize_actions, from_agent_frame, to_agent_frame, wrap_angle

CATEGORIES = ("forward", "left_turn", "right_turn")
TABLE_COLUMNS = {"All": None, "Forward": "forward", "Left turn": "left_turn", "Right turn": "right_turn"}


@dataclass
class SimAgent:
    pose: Pose2
    step_length: float = 0.5
    max_linear: float = 1.0
    max_angular: float = 1.0

    def __post_init__(self):
        if not (self.step_length > 0 and self.max_linear > 0 and self.max_angular > 0):
            raise ValueError("step length and speed limits must be positive")


@dataclass
class Course:
    id: str
    start: Pose2
    waypoints: list[tuple[float, float]]
    category: str = "forward"
    timeout: int = 2000
    corridor_half_width: float = 3.0

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("a course needs at least one waypoint")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        self.waypoints = [(float(x), float(y)) for x, y in self.waypoints]

    @property
    def polyline(self) -> np.ndarray:
        return np.array([(self.start.x, self.start.y), *self.waypoints], dtype=np.float64)


@dataclass
class TrialResult:
    course_id: str
    category: str
    outcome: str  # success | timeout | corridor_violation
    steps: int
    final_distance: float
    route_index: int = 0
    path: list[tuple[float, float]] = field(default_factory=list, repr=False)

    def record(self) -> dict:
        d = asdict(self)
        d.pop("path")
        return d


@dataclass(frozen=True)
class PDGains:
    kp_linear: float = 1.0
    kp_angular: float = 1.5
    kd_angular: float = 0.1
    dt: float = 0.1


def pd_control(target_waypoint, gains: PDGains, agent: SimAgent, prev_bearing: float | None = None):
    """Velocity command toward an agent-frame waypoint (meters).

    Returns ``(linear, angular, bearing)``. ``bearing`` is the waypoint's
    angle from +y (positive to the right); ``angular`` is a yaw rate,
    counterclockwise positive, so a waypoint on the right gives a
    negative command.
    """
    x, y = float(target_waypoint[0]), float(target_waypoint[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("waypoint must be finite")
    if x == 0.0 and y == 0.0:
        return 0.0, 0.0, 0.0
    err = math.atan2(x, y)
    d_err = 0.0 if prev_bearing is None else float(wrap_angle(err - prev_bearing)) / gains.dt
    angular = -(gains.kp_angular * err + gains.kd_angular * d_err)
    angular = max(-agent.max_angular, min(agent.max_angular, angular))
    linear = max(0.0, min(agent.max_linear, gains.kp_linear * y))
    return linear, angular, err


class PDController:
    def __init__(self, gains: PDGains, agent: SimAgent):
        self.gains = gains
        self.agent = agent
        self.prev: float | None = None

    def reset(self):
        self.prev = None

    def command(self, pose: Pose2, waypoint_world) -> tuple[float, float]:
        local = to_agent_frame(np.asarray(waypoint_world, dtype=np.float64), pose)
        v, w, self.prev = pd_control(local, self.gains, self.agent, self.prev)
        return v, w


def unicycle_step(pose: Pose2, linear: float, angular: float, dt: float) -> Pose2:
    """Move ``linear * dt`` along the current heading, then rotate by ``angular * dt``."""
    d = linear * dt
    return Pose2(pose.x - d * math.sin(pose.yaw), pose.y + d * math.cos(pose.yaw), pose.yaw + angular * dt)


def distance_to_polyline(p, line: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    best = math.inf
    for a, b in zip(line[:-1], line[1:]):
        ab = b - a
        denom = float(ab @ ab)
        u = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
        best = min(best, float(np.hypot(*(a + u * ab - p))))
    if len(line) == 1:
        best = float(np.hypot(*(line[0] - p)))
    return best


# ---------------------------------------------------------------------------
# policies


class Policy(Protocol):
    def act(self, obs_tokens, past_positions: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
        """Normalized ``(horizon, 2)`` actions and an arrival probability."""
        ...


class OraclePolicy:
    """Heads straight for the sub-goal and reports arrival within ``arrival_radius`` normalized units."""

    uses_observations = False

    def __init__(self, horizon: int = 5, arrival_radius: float = 2.0, arrive: bool | None = None):
        self.horizon = horizon
        self.arrival_radius = arrival_radius
        self.arrive = arrive  # force the arrival output (True/False) when set

    def act(self, obs_tokens, past_positions, target):
        t = np.asarray(target, dtype=np.float64)
        dist = float(np.hypot(*t))
        u = t / dist if dist > 0 else np.array([0.0, 1.0])
        steps = np.minimum(np.arange(1, self.horizon + 1, dtype=np.float64), max(dist, 1e-9))
        actions = steps[:, None] * u[None, :]
        if self.arrive is None:
            prob = 1.0 if dist <= self.arrival_radius else 0.0
        else:
            prob = 1.0 if self.arrive else 0.0
        return actions, prob


class ModelPolicy:
    uses_observations = True

    def __init__(self, net):
        self.net = net
        net.eval()

    def act(self, obs_tokens, past_positions, target):
        import torch

        with torch.no_grad():
            out = self.net(
                obs_tokens[None].float(),
                torch.as_tensor(np.asarray(past_positions), dtype=torch.float32)[None],
                torch.as_tensor(np.asarray(target), dtype=torch.float32)[None],
            )
        return out.actions[0].double().numpy(), float(torch.sigmoid(out.arrival_logit[0]))


class SyntheticObservations:
    """Per-tick tokens from a feature provider, keyed by course and tick."""

    def __init__(self, provider):
        self.provider = provider

    def tokens(self, course: Course, ticks: Sequence[int]):
        return self.provider.encode([f"sim:{course.id}:{max(t, 0)}" for t in ticks])


def run_trial(policy, course: Course, agent: SimAgent, obs_provider=None, cfg: SimConfig | None = None,
              context: int = 5, rng: np.random.Generator | None = None, position_noise: float = 0.0) -> TrialResult:
    cfg = cfg or SimConfig()
    gains = PDGains(cfg.kp_linear, cfg.kp_angular, cfg.kd_angular, cfg.dt)
    ctrl = PDController(gains, agent)
    pose = course.start
    final = np.array(course.waypoints[-1])
    line = course.polyline
    history: deque = deque([(pose.x, pose.y)] * context, maxlen=context)
    route = 0
    tick = 0
    track = None
    path = [(pose.x, pose.y)]

    def result(outcome, steps):
        return TrialResult(course.id, course.category, outcome, steps,
                           float(np.hypot(pose.x - final[0], pose.y - final[1])), route, path)

    for step in range(course.timeout):
        if step % cfg.policy_period == 0:
            observed = np.array([pose.x, pose.y])
            if position_noise > 0 and rng is not None:
                observed = observed + rng.normal(0.0, position_noise, 2)
            history.append(tuple(observed))
            frame = Pose2(float(observed[0]), float(observed[1]), pose.yaw)
            past = to_agent_frame(np.array(history), frame) / agent.step_length
            target = to_agent_frame(np.array(course.waypoints[route]), frame) / agent.step_length
            tokens = None
            if obs_provider is not None and getattr(policy, "uses_observations", True):
                tokens = obs_provider.tokens(course, range(tick - context + 1, tick + 1))
            try:
                actions, prob = policy.act(tokens, past, target)
            except Exception as e:  # noqa: BLE001 - surfaced with the step index
                raise PolicyError(step, e) from e
            if prob > cfg.arrival_threshold:
                if route == len(course.waypoints) - 1:
                    if np.hypot(pose.x - final[0], pose.y - final[1]) <= cfg.success_radius:
                        return result("success", step)
                else:
                    route += 1
            meters = denormalize_actions(actions, agent.step_length)
            track = from_agent_frame(meters[cfg.track_waypoint - 1], pose)
            tick += 1
        v, w = ctrl.command(pose, track)
        v = min(v, agent.max_linear)
        pose = unicycle_step(pose, v, w, cfg.dt)
        path.append((pose.x, pose.y))
        if distance_to_polyline((pose.x, pose.y), line) > course.corridor_half_width:
            return result("corridor_violation", step + 1)
    return result("timeout", course.timeout)


def success_table(results: Sequence[TrialResult]) -> dict[str, float]:
    """Success percentage per category plus ``All``; categories without trials are omitted."""
    if not results:
        raise EmptyInput("no trial results")
    table = {}
    for col, cat in TABLE_COLUMNS.items():
        sel = [r for r in results if cat is None or r.category == cat]
        if sel:
            table[col] = 100.0 * sum(r.outcome == "success" for r in sel) / len(sel)
    return table


def format_success_table(table: dict[str, float]) -> str:
    cols = [c for c in TABLE_COLUMNS if c in table]
    vals = [f"{table[c]:.1f}" for c in cols]
    w = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    return "  ".join(c.rjust(x) for c, x in zip(cols, w)) + "\n" + "  ".join(v.rjust(x) for v, x in zip(vals, w)) + "\n"


# ---------------------------------------------------------------------------
# courses


def _leg_points(a, b, spacing):
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(1, int(math.ceil(np.hypot(*(b - a)) / spacing)))
    return [tuple(a + (b - a) * i / n) for i in range(1, n + 1)]


def make_course(course_id: str, category: str, rng: np.random.Generator, cfg: SimConfig | None = None,
                spacing: float = 20.0) -> Course:
    """A course whose target lies 50-100 m (straight line) from the start."""
    cfg = cfg or SimConfig()
    yaw0 = float(rng.uniform(-math.pi, math.pi))
    start = Pose2(float(rng.uniform(-20, 20)), float(rng.uniform(-20, 20)), yaw0)
    heading = np.array([-math.sin(yaw0), math.cos(yaw0)])
    origin = np.array([start.x, start.y])
    if category == "forward":
        dist = rng.uniform(50, 100)
        pts = _leg_points(origin, origin + dist * heading, spacing)
    else:
        while True:
            l1, l2 = rng.uniform(20, 70), rng.uniform(20, 70)
            if 50 <= math.hypot(l1, l2) <= 100:
                break
        turn = math.radians(rng.uniform(70, 110)) * (1 if category == "left_turn" else -1)
        c, s = math.cos(turn), math.sin(turn)
        h2 = np.array([c * heading[0] - s * heading[1], s * heading[0] + c * heading[1]])
        corner = origin + l1 * heading
        pts = _leg_points(origin, corner, spacing) + _leg_points(corner, corner + l2 * h2, spacing)
    length = sum(np.hypot(*(np.array(b) - np.array(a))) for a, b in zip([tuple(origin)] + pts[:-1], pts))
    timeout = int(3 * length / (cfg.max_linear * cfg.dt)) + 200
    return Course(course_id, start, pts, category, timeout, cfg.corridor_half_width)


def generate_courses(cfg: SimConfig | None = None, per_category: int | None = None) -> list[Course]:
    cfg = cfg or SimConfig()
    n = per_category if per_category is not None else cfg.courses_per_category
    rng = np.random.default_rng(cfg.seed)
    return [make_course(f"{cat}-{i:03d}", cat, rng, cfg) for cat in CATEGORIES for i in range(n)]


def write_courses(path, courses: Sequence[Course]):
    doc = {"courses": [
        {"id": c.id, "category": c.category, "start": [c.start.x, c.start.y, c.start.yaw],
         "waypoints": [list(w) for w in c.waypoints], "timeout": c.timeout,
         "corridor_half_width": c.corridor_half_width}
        for c in courses
    ]}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def read_courses(path) -> list[Course]:
    try:
        doc = yaml.safe_load(Path(path).read_text())
        return [
            Course(c["id"], Pose2(*map(float, c["start"])), [tuple(w) for w in c["waypoints"]],
                   c.get("category", "forward"), int(c.get("timeout", 2000)),
                   float(c.get("corridor_half_width", 3.0)))
            for c in doc["courses"]
        ]
    except (KeyError, TypeError, ValueError, yaml.YAMLError) as e:
        raise ParseError(str(e), path) from None


def run_suite(policy, courses: Sequence[Course], cfg: SimConfig | None = None, obs_provider=None,
              context: int = 5, position_noise: float = 0.0) -> list[TrialResult]:
    cfg = cfg or SimConfig()
    rng = np.random.default_rng(cfg.seed)
    results = []
    for c in courses:
        agent = SimAgent(c.start, cfg.step_length, cfg.max_linear, cfg.max_angular)
        results.append(run_trial(policy, c, agent, obs_provider, cfg, context, rng, position_noise))
    return results


def write_results(path, results: Sequence[TrialResult]):
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.record(), sort_keys=True) + "\n")
