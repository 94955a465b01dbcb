"""Critical-scenario tags: Turn, Crossing, Detour, Proximity, Crowd (+ Other)."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateAction, EmptyInput

SCENARIOS = ("turn", "crossing", "detour", "proximity", "crowd", "other")


@dataclass(frozen=True)
class ScenarioTagSet:
    turn: bool = False
    crossing: bool = False
    detour: bool = False
    proximity: bool = False
    crowd: bool = False

    @property
    def other(self) -> bool:
        return not (self.turn or self.crossing or self.detour or self.proximity or self.crowd)

    def as_dict(self) -> dict[str, bool]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["other"] = self.other
        return d

    def names(self) -> list[str]:
        return [k for k, v in self.as_dict().items() if v]


@dataclass
class TaggerConfig:
    turn_deg: float = 20.0
    crossing_score: float = 0.5
    detour_deg: float = 45.0
    proximity_area: float = 0.25
    crowd_count: int = 5
    person_label: str = "person"
    traffic_light_label: str = "traffic light"
    # which ground-truth waypoint defines the action angle: "last" or "max"
    action_step: str = "last"
    eps: float = 1e-9


def _angle_deg(v) -> float:
    return math.degrees(math.atan2(v[0], v[1]))


def action_angle(actions, mode: str = "last", eps: float = 1e-9) -> float:
    """Signed angle (degrees) of the reference ground-truth action from +y.

    ``mode="last"`` uses the final waypoint; ``mode="max"`` uses the
    waypoint with the largest absolute angle.
    """
    a = np.asarray(actions, dtype=np.float64).reshape(-1, 2)
    if mode == "last":
        ref = a[-1]
        if math.hypot(*ref) <= eps:
            raise DegenerateAction("final action is near zero")
        return _angle_deg(ref)
    if mode == "max":
        ok = [v for v in a if math.hypot(*v) > eps]
        if not ok:
            raise DegenerateAction("all actions are near zero")
        return max((_angle_deg(v) for v in ok), key=abs)
    raise ValueError(f"unknown action_step mode {mode!r}")


def target_angle(target, eps: float = 1e-9) -> float:
    t = np.asarray(target, dtype=np.float64)
    if math.hypot(*t) <= eps:
        raise DegenerateAction("target coincides with the agent")
    return _angle_deg(t)


def angle_diff_deg(a: float, b: float) -> float:
    """Absolute difference of two angles in degrees, folded into [0, 180]."""
    d = abs(a - b) % 360.0
    return 360.0 - d if d > 180.0 else d


def tag_sample(sample, dets=None, cfg: TaggerConfig | None = None) -> ScenarioTagSet:
    cfg = cfg or TaggerConfig()
    detections = dets.detections if dets is not None else ()

    turn = detour = False
    try:
        phi_a = action_angle(sample.future_actions, cfg.action_step, cfg.eps)
    except DegenerateAction:
        phi_a = None
    if phi_a is not None:
        turn = abs(phi_a) > cfg.turn_deg
        try:
            phi_t = target_angle(sample.target_position, cfg.eps)
        except DegenerateAction:
            phi_t = None
        if phi_t is not None:
            detour = angle_diff_deg(phi_a, phi_t) > cfg.detour_deg

    crossing = any(d.label == cfg.traffic_light_label and d.score > cfg.crossing_score for d in detections)
    persons = [d for d in detections if d.label == cfg.person_label]
    proximity = bool(persons) and max(d.area for d in persons) > cfg.proximity_area
    crowd = len(persons) >= cfg.crowd_count
    return ScenarioTagSet(turn, crossing, detour, proximity, crowd)


def is_angle_taggable(sample, cfg: TaggerConfig | None = None) -> bool:
    cfg = cfg or TaggerConfig()
    try:
        action_angle(sample.future_actions, cfg.action_step, cfg.eps)
    except DegenerateAction:
        return False
    return True


def scenario_proportions(tags: Sequence[ScenarioTagSet]) -> dict[str, float]:
    if not tags:
        raise EmptyInput("no tag sets")
    n = len(tags)
    return {s: sum(getattr(t, s) for t in tags) / n for s in SCENARIOS}


def format_proportions(props: dict[str, float], count: int | None = None) -> str:
    """Percent row in the benchmark-table header layout."""
    cols = [s.capitalize() for s in SCENARIOS] + ["All"]
    vals = [f"{100 * props[s]:.0f}%" for s in SCENARIOS] + ["100%"]
    w = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    lines = ["  ".join(c.rjust(x) for c, x in zip(cols, w)), "  ".join(v.rjust(x) for v, x in zip(vals, w))]
    if count is not None:
        lines.append(f"samples: {count}")
    return "\n".join(lines) + "\n"


def tag_all(samples: Iterable, lookup, cfg: TaggerConfig | None = None):
    """Tag samples in place. ``lookup(sample)`` returns a DetectionRecord or None.

    Returns the number of samples whose action angle was untaggable.
    """
    cfg = cfg or TaggerConfig()
    untaggable = 0
    for s in samples:
        if not is_angle_taggable(s, cfg):
            untaggable += 1
        s.scenario_tags = tag_sample(s, lookup(s), cfg)
    return untaggable
