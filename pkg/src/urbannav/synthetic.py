"""Procedural stand-in for a video corpus: pose logs, detection logs and
per-frame scene descriptors, written in the same formats real data uses.

Each trajectory is a sequence of motion segments (straights, arcs, sharp
turns, side-steps, stop-and-go) plus detection events (traffic lights,
crowds, a nearby pedestrian). The per-frame descriptor summarises what a
forward camera would show: the upcoming heading changes, current speed
and the detection summary. It is what ``SyntheticFeatureProvider``
projects into feature tokens.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Detection, DetectionRecord, SamplingParams, write_detections
from .features import DESCRIPTOR_DIM
from .trajectory import ManifestEntry, Pose3, write_manifest, write_pose_log


@dataclass(frozen=True)
class DomainStyle:
    speed: float  # odometry units per frame
    arc_rate: float  # max heading change per frame on arcs (rad)
    turn_deg: tuple[float, float]
    turn_frames: tuple[int, int]
    weights: dict  # segment kind -> relative frequency


DOMAINS = {
    "walking": DomainStyle(1.2, 0.08, (60.0, 100.0), (4, 8),
                           {"straight": 3, "arc": 2, "turn": 2, "jog": 1, "stop": 1}),
    "driving": DomainStyle(6.0, 0.04, (70.0, 95.0), (6, 10),
                           {"straight": 4, "arc": 3, "turn": 1, "jog": 0, "stop": 1}),
    "teleop": DomainStyle(0.6, 0.10, (70.0, 110.0), (3, 6),
                          {"straight": 2, "arc": 2, "turn": 3, "jog": 2, "stop": 1}),
}


def _segment(kind: str, rng: np.random.Generator, style: DomainStyle):
    """Per-frame (heading increment, speed factor) pairs for one segment."""
    if kind == "straight":
        n = int(rng.integers(8, 20))
        return [(0.0, 1.0)] * n
    if kind == "arc":
        n = int(rng.integers(10, 25))
        w = rng.uniform(0.3, 1.0) * style.arc_rate * rng.choice([-1, 1])
        return [(w, 1.0)] * n
    if kind == "turn":
        n = int(rng.integers(*style.turn_frames))
        total = math.radians(rng.uniform(*style.turn_deg)) * rng.choice([-1, 1])
        return [(0.0, 1.0)] * 4 + [(total / n, 0.8)] * n + [(0.0, 1.0)] * 4
    if kind == "jog":
        a = math.radians(rng.uniform(35, 60)) * rng.choice([-1, 1])
        hold = int(rng.integers(3, 6))
        return [(a / 2, 1.0)] * 2 + [(0.0, 1.0)] * hold + [(-a / 2, 1.0)] * 4 + [(0.0, 1.0)] * hold + [(a / 2, 1.0)] * 2
    if kind == "stop":
        ramp = [(0.0, f) for f in (0.75, 0.5, 0.25)]
        halt = [(0.0, 0.0)] * int(rng.integers(2, 5))
        return ramp + halt + ramp[::-1]
    raise ValueError(kind)


def generate_motion(rng: np.random.Generator, length: int, style: DomainStyle,
                    force=("turn",)) -> tuple[np.ndarray, np.ndarray]:
    """Heading increments and speed factors for ``length`` frames."""
    kinds = list(style.weights)
    p = np.array([style.weights[k] for k in kinds], dtype=float)
    p /= p.sum()
    steps: list[tuple[float, float]] = [(0.0, 1.0)] * 6
    pending = list(force)
    while len(steps) < length:
        kind = pending.pop(0) if pending else str(rng.choice(kinds, p=p))
        steps.extend(_segment(kind, rng, style))
    steps = steps[:length]
    return np.array([s[0] for s in steps]), np.array([s[1] for s in steps])


def integrate(dyaw: np.ndarray, speed: np.ndarray, start=(0.0, 0.0, 0.0)):
    """Unicycle integration: turn first, then move along the new heading (forward = +y)."""
    n = len(dyaw)
    xy = np.zeros((n, 2))
    yaw = np.zeros(n)
    x, y, a = start
    for j in range(n):
        if j > 0:
            a += dyaw[j]
            x += -speed[j] * math.sin(a)
            y += speed[j] * math.cos(a)
        xy[j] = (x, y)
        yaw[j] = a
    return xy, yaw


def _box(rng, area):
    aspect = rng.uniform(0.3, 0.6)  # width / height, pedestrians are tall
    h = min(0.98, math.sqrt(area / aspect))
    w = min(0.98, area / h)
    x0 = rng.uniform(0.0, 1.0 - w)
    y0 = rng.uniform(0.0, 1.0 - h)
    return (x0, y0, x0 + w, y0 + h)


def generate_detections(rng: np.random.Generator, length: int, events_in: tuple[int, int]) -> dict[int, DetectionRecord]:
    """Background clutter plus one stretch each of crossing, crowd and proximity."""
    recs = {j: DetectionRecord(j) for j in range(length)}
    for j in range(length):
        for _ in range(int(rng.integers(0, 3))):
            recs[j].detections.append(Detection("person", float(rng.uniform(0.5, 0.99)), _box(rng, rng.uniform(0.002, 0.03))))
        if rng.random() < 0.15:
            recs[j].detections.append(Detection("traffic light", float(rng.uniform(0.1, 0.45)), _box(rng, 0.002)))
        if rng.random() < 0.2:
            recs[j].detections.append(Detection("car", float(rng.uniform(0.5, 0.99)), _box(rng, 0.05)))
    lo, hi = events_in
    for kind in ("crossing", "crowd", "proximity"):
        start = int(rng.integers(lo, max(lo + 1, hi - 4)))
        for j in range(start, min(length, start + int(rng.integers(3, 7)))):
            dets = recs[j].detections
            if kind == "crossing":
                dets.append(Detection("traffic light", float(rng.uniform(0.55, 0.95)), _box(rng, 0.003)))
            elif kind == "crowd":
                dets.extend(Detection("person", float(rng.uniform(0.6, 0.99)), _box(rng, rng.uniform(0.003, 0.02)))
                            for _ in range(int(rng.integers(5, 9))))
            else:
                dets.append(Detection("person", float(rng.uniform(0.7, 0.99)), _box(rng, rng.uniform(0.3, 0.5))))
    return recs


def scene_descriptors(yaw: np.ndarray, speed: np.ndarray,
                      recs: dict[int, DetectionRecord], horizon: int = 5) -> np.ndarray:
    n = len(yaw)
    out = np.zeros((n, DESCRIPTOR_DIM), dtype=np.float32)
    for j in range(n):
        for h in range(1, horizon + 1):
            d = yaw[min(j + h, n - 1)] - yaw[j]
            out[j, 2 * (h - 1)] = math.sin(d)
            out[j, 2 * (h - 1) + 1] = math.cos(d)
        out[j, 10] = speed[min(j + 1, n - 1)]
        dets = recs[j].detections
        out[j, 11] = max((d.score for d in dets if d.label == "traffic light"), default=0.0)
        persons = [d for d in dets if d.label == "person"]
        out[j, 12] = len(persons) / 10.0
        out[j, 13] = max((d.area for d in persons), default=0.0)
    return out


def _quat_yaw(yaw: float, pitch: float = 0.0) -> tuple[float, float, float, float]:
    # q_z(yaw) * q_x(pitch): tilting about the body x axis keeps the ground heading
    cz, sz = math.cos(yaw / 2), math.sin(yaw / 2)
    cx, sx = math.cos(pitch / 2), math.sin(pitch / 2)
    return (cz * cx, cz * sx, sz * sx, sz * cx)


def write_synthetic_corpus(out_dir, seed: int, n_samples: int, domain: str = "walking",
                           length: int = 80, params: SamplingParams | None = None,
                           position_noise: float = 0.0) -> Path:
    """Write pose logs, detection logs, descriptors and a manifest for ``n_samples`` samples.

    Returns the manifest path. Output is a pure function of the arguments.
    """
    params = params or SamplingParams()
    style = DOMAINS[domain]
    out = Path(out_dir)
    for sub in ("poses", "detections", "features"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    overhead = params.context + params.lookahead_max
    per_traj = length - overhead
    if per_traj < 1:
        raise ValueError("trajectory length too short for the sampling window")
    rng = np.random.default_rng([seed, sum(map(ord, domain))])
    entries = []
    remaining = n_samples
    i = 0
    while remaining > 0:
        take = min(per_traj, remaining)
        L = take + overhead
        tid = f"{domain}-{seed}-{i:04d}"
        force = ["turn"] if i % 2 == 0 else ["arc", "turn"]
        dyaw, factor = generate_motion(rng, L, style, force=force)
        speed = style.speed * factor * rng.uniform(0.9, 1.1)
        xy, yaw = integrate(dyaw, speed, (rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-math.pi, math.pi)))
        xy = xy + rng.normal(0.0, position_noise * style.speed, xy.shape)
        recs = generate_detections(rng, L, (params.context, max(params.context + 1, L - params.lookahead_max)))
        desc = scene_descriptors(yaw, factor, recs, params.horizon)

        pitch = rng.normal(0.0, 0.02, L)
        poses = [
            Pose3(j, (float(xy[j, 0]), float(xy[j, 1]), float(rng.normal(0.0, 0.01))), _quat_yaw(float(yaw[j]), float(pitch[j])))
            for j in range(L)
        ]
        write_pose_log(out / "poses" / f"{tid}.txt", poses)
        write_detections(out / "detections" / f"{tid}.txt", recs)
        np.save(out / "features" / f"{tid}.npy", desc)
        entries.append(ManifestEntry(
            id=tid, pose_log=f"poses/{tid}.txt", frames=f"features/{tid}.npy",
            detections=f"detections/{tid}.txt", source_domain=domain,
        ))
        remaining -= take
        i += 1
    manifest = out / "manifest.json"
    write_manifest(manifest, entries)
    return manifest


def make_synthetic_dataset(out_dir, seed: int, n: int, domain: str = "walking",
                           params: SamplingParams | None = None, **kw) -> Path:
    """Corpus, shards and scenario tags in one call; returns the shard-set directory."""
    from .pipeline import process_manifest, tag_shard_set

    out = Path(out_dir)
    manifest = write_synthetic_corpus(out / "data", seed, n, domain, params=params, **kw)
    shard_dir = out / "shards"
    process_manifest(manifest, shard_dir, params or SamplingParams())
    tag_shard_set(shard_dir)
    return shard_dir
