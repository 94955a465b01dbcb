"""Training/evaluation samples from normalized trajectories, plus detection logs."""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ParseError, TrajectoryTooShort
from .scenarios import ScenarioTagSet
from .trajectory import Trajectory, fit_step_length


@dataclass
class SamplingParams:
    context: int = 5
    horizon: int = 5
    lookahead_min: int = 5
    lookahead_max: int = 25
    stride: int = 1
    arrival_radius: float = 2.0
    seed: int = 0
    balance_arrival: bool = False


@dataclass(eq=False)
class NavigationSample:
    trajectory_id: str
    t: int
    frame_index: int
    past_frame_refs: list[str]
    past_positions: np.ndarray  # (context, 2), normalized agent frame
    target_position: np.ndarray  # (2,)
    future_actions: np.ndarray  # (horizon, 2)
    future_frame_refs: list[str]
    arrival_label: bool
    step_length: float  # meters (or odometry units) per normalized unit
    scenario_tags: ScenarioTagSet | None = None


def trajectory_rng(seed: int, traj_id: str) -> np.random.Generator:
    # keyed by id so draws do not depend on processing order
    return np.random.default_rng([seed, zlib.crc32(traj_id.encode())])


def valid_anchors(n_poses: int, params: SamplingParams) -> range:
    return range(params.context, n_poses - params.lookahead_max, params.stride)


def build_samples(traj: Trajectory, params: SamplingParams | None = None) -> list[NavigationSample]:
    params = params or SamplingParams()
    if params.lookahead_min < 1 or params.lookahead_max < params.lookahead_min:
        raise ValueError("invalid lookahead range")
    if params.lookahead_max < params.horizon:
        raise ValueError("lookahead_max must cover the prediction horizon")
    anchors = np.fromiter(valid_anchors(len(traj), params), dtype=np.int64)
    if len(anchors) == 0:
        raise TrajectoryTooShort(
            f"trajectory {traj.id!r} has {len(traj)} poses; need more than "
            f"{params.context + params.lookahead_max}"
        )
    d = traj.step_length_mean if traj.step_length_mean is not None else fit_step_length(traj)

    rng = trajectory_rng(params.seed, traj.id)
    lookahead = rng.integers(params.lookahead_min, params.lookahead_max + 1, size=len(anchors))
    k, h = params.context, params.horizon
    offsets = np.empty((len(anchors), k + h + 1), dtype=np.int64)
    offsets[:, :k] = np.arange(-(k - 1), 1)
    offsets[:, k : k + h] = np.arange(1, h + 1)
    offsets[:, -1] = lookahead
    rel = kernels.relative_positions(traj.xy, traj.yaw, anchors, offsets) / d

    samples = []
    refs = traj.frame_refs
    for i, t in enumerate(anchors.tolist()):
        target = rel[i, -1].copy()
        samples.append(
            NavigationSample(
                trajectory_id=traj.id,
                t=t,
                frame_index=int(traj.frame_indices[t]),
                past_frame_refs=refs[t - k + 1 : t + 1],
                past_positions=rel[i, :k].copy(),
                target_position=target,
                future_actions=rel[i, k : k + h].copy(),
                future_frame_refs=refs[t + 1 : t + h + 1],
                arrival_label=bool(math.hypot(target[0], target[1]) <= params.arrival_radius),
                step_length=float(d),
            )
        )
    if params.balance_arrival:
        samples = balance_arrival(samples, rng)
    return samples


def balance_arrival(samples: list[NavigationSample], rng: np.random.Generator) -> list[NavigationSample]:
    """Oversample the minority arrival class (by repetition) to match the majority."""
    pos = [s for s in samples if s.arrival_label]
    neg = [s for s in samples if not s.arrival_label]
    if not pos or not neg:
        return samples
    minority, majority = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    extra = rng.integers(0, len(minority), size=len(majority) - len(minority))
    return samples + [minority[i] for i in extra]


# ---------------------------------------------------------------------------
# detection logs


@dataclass(frozen=True)
class Detection:
    label: str
    score: float
    bbox: tuple[float, float, float, float]  # normalized (x0, y0, x1, y1)

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)


@dataclass
class DetectionRecord:
    frame_index: int
    detections: list[Detection] = field(default_factory=list)


def _parse_detection(parts: Sequence[str]) -> tuple[int, Detection]:
    frame = int(parts[0])
    label = " ".join(parts[1:-5])
    score, x0, y0, x1, y1 = (float(v) for v in parts[-5:])
    if not label:
        raise ValueError("missing class label")
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score} outside [0, 1]")
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        raise ValueError(f"invalid normalized box {(x0, y0, x1, y1)}")
    return frame, Detection(label, score, (x0, y0, x1, y1))


def ingest_detections(path) -> dict[int, DetectionRecord]:
    """Parse a detection log: ``frame_index class score x0 y0 x1 y1`` per line.

    Class labels may contain spaces (``traffic light``). A line holding
    only a frame index declares a frame with no detections.
    """
    records: dict[int, DetectionRecord] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if len(parts) == 1:
                    frame = int(parts[0])
                    records.setdefault(frame, DetectionRecord(frame))
                    continue
                if len(parts) < 7:
                    raise ValueError(f"expected at least 7 fields, got {len(parts)}")
                frame, det = _parse_detection(parts)
            except ValueError as e:
                raise ParseError(str(e), path, lineno) from None
            records.setdefault(frame, DetectionRecord(frame)).detections.append(det)
    return records


def detections_at(records: dict[int, DetectionRecord], frame_index: int) -> DetectionRecord:
    return records.get(frame_index) or DetectionRecord(frame_index)


def write_detections(path, records: dict[int, DetectionRecord]):
    with open(path, "w") as fh:
        for frame in sorted(records):
            if not records[frame].detections:
                fh.write(f"{frame}\n")
            for d in records[frame].detections:
                box = " ".join(repr(float(v)) for v in d.bbox)
                fh.write(f"{frame} {d.label} {float(d.score)!r} {box}\n")
