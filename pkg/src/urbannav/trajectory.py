"""Ground-plane trajectories from egomotion pose logs.

Conventions used throughout the package:

* ``Pose2.yaw`` is the counterclockwise rotation of the body frame in the
  ground plane, and the body's forward axis is +y. A pose with yaw 0
  faces world +y.
* In an agent frame the agent sits at the origin facing +y and +x is its
  right-hand side. Angles inside an agent frame (bearings, action and
  target angles) are measured from +y and are positive toward +x.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import (
    DegeneratePose,
    DegenerateTrajectory,
    InvalidQuaternion,
    InvalidStepLength,
    OutOfRange,
    ParseError,
)

SOURCE_DOMAINS = ("walking", "driving", "teleop")


def wrap_angle(a):
    """Wrap radians into (-pi, pi]."""
    if isinstance(a, np.ndarray):
        return np.pi - np.mod(np.pi - a, 2 * np.pi)
    return math.pi - (math.pi - a) % (2 * math.pi)


@dataclass(frozen=True)
class Pose3:
    t: int
    position: tuple[float, float, float]
    rotation: tuple[float, float, float, float]  # (w, x, y, z)

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.rotation))
        if not abs(n - 1.0) <= 1e-6:
            raise InvalidQuaternion(f"quaternion norm {n!r} at frame {self.t}")


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", float(wrap_angle(float(self.yaw))))


@dataclass(frozen=True)
class AgentFrame:
    origin: Pose2


@dataclass(frozen=True)
class IngestionProfile:
    """How a pose log's axes map onto the ground plane.

    ``forward`` is the body axis the agent moves along. ``ground_x`` and
    ``ground_y`` give, for each ground axis, the world axis index and its
    sign; together with the implied up axis they must form a right-handed
    frame so that counterclockwise yaw is preserved.
    """

    name: str
    forward: tuple[float, float, float] = (0.0, 1.0, 0.0)
    ground_x: tuple[int, float] = (0, 1.0)
    ground_y: tuple[int, float] = (1, 1.0)


PROFILES = {
    # z-up world, agent moves along body +y
    "enu": IngestionProfile("enu"),
    # camera convention (x right, y down, z forward), as written by most VO tools
    "opencv": IngestionProfile("opencv", forward=(0.0, 0.0, 1.0), ground_x=(0, 1.0), ground_y=(2, 1.0)),
}


def _rotate(q, v):
    w, qx, qy, qz = q
    vx, vy, vz = v
    # v' = v + 2w (u x v) + 2 u x (u x v)
    cx = qy * vz - qz * vy
    cy = qz * vx - qx * vz
    cz = qx * vy - qy * vx
    ccx = qy * cz - qz * cy
    ccy = qz * cx - qx * cz
    ccz = qx * cy - qy * cx
    return (vx + 2 * (w * cx + ccx), vy + 2 * (w * cy + ccy), vz + 2 * (w * cz + ccz))


def project_to_ground(pose: Pose3, profile: IngestionProfile = PROFILES["enu"]) -> Pose2:
    fwd = _rotate(pose.rotation, profile.forward)
    (ix, sx), (iy, sy) = profile.ground_x, profile.ground_y
    hx, hy = sx * fwd[ix], sy * fwd[iy]
    if math.hypot(hx, hy) <= 1e-6:
        raise DegeneratePose(f"forward axis is vertical at frame {pose.t}")
    return Pose2(sx * pose.position[ix], sy * pose.position[iy], math.atan2(-hx, hy))


def to_agent_frame(point, frame: AgentFrame | Pose2):
    """Express world point(s) ``(..., 2)`` in the agent frame."""
    o = frame.origin if isinstance(frame, AgentFrame) else frame
    p = np.asarray(point, dtype=np.float64)
    c, s = math.cos(o.yaw), math.sin(o.yaw)
    dx = p[..., 0] - o.x
    dy = p[..., 1] - o.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def from_agent_frame(point, frame: AgentFrame | Pose2):
    o = frame.origin if isinstance(frame, AgentFrame) else frame
    p = np.asarray(point, dtype=np.float64)
    c, s = math.cos(o.yaw), math.sin(o.yaw)
    return np.stack([c * p[..., 0] - s * p[..., 1] + o.x, s * p[..., 0] + c * p[..., 1] + o.y], axis=-1)


def bearing(point) -> np.ndarray:
    """Angle of agent-frame point(s) from +y, positive toward +x (radians)."""
    p = np.asarray(point, dtype=np.float64)
    return np.arctan2(p[..., 0], p[..., 1])


@dataclass
class Trajectory:
    id: str
    xy: np.ndarray
    yaw: np.ndarray
    frame_refs: list[str]
    frame_indices: np.ndarray | None = None
    source_domain: str = "walking"
    step_length_mean: float | None = None

    def __post_init__(self):
        self.xy = np.ascontiguousarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.yaw = np.ascontiguousarray(wrap_angle(np.asarray(self.yaw, dtype=np.float64)))
        if self.frame_indices is None:
            self.frame_indices = np.arange(len(self.xy), dtype=np.int64)
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        if not (len(self.xy) == len(self.yaw) == len(self.frame_refs) == len(self.frame_indices)):
            raise ValueError("poses, frame_refs and frame indices must have equal length")
        if len(self.frame_indices) > 1 and np.any(np.diff(self.frame_indices) <= 0):
            raise ValueError("frame indices must be strictly increasing")
        if self.source_domain not in SOURCE_DOMAINS:
            raise ValueError(f"unknown source domain {self.source_domain!r}")

    @classmethod
    def from_poses(cls, id: str, poses: Sequence[Pose2], frame_refs=None, **kw) -> "Trajectory":
        xy = np.array([[p.x, p.y] for p in poses], dtype=np.float64).reshape(-1, 2)
        yaw = np.array([p.yaw for p in poses], dtype=np.float64)
        if frame_refs is None:
            frame_refs = [f"{id}:{i}" for i in range(len(poses))]
        return cls(id, xy, yaw, list(frame_refs), **kw)

    @property
    def poses(self) -> list[Pose2]:
        return [Pose2(float(x), float(y), float(a)) for (x, y), a in zip(self.xy, self.yaw)]

    def __len__(self):
        return len(self.xy)

    def transformed(self, dx: float, dy: float, dtheta: float) -> "Trajectory":
        """Copy with a world rigid motion (rotation about the origin, then translation) applied."""
        c, s = math.cos(dtheta), math.sin(dtheta)
        xy = self.xy @ np.array([[c, s], [-s, c]]) + np.array([dx, dy])
        return Trajectory(
            self.id, xy, self.yaw + dtheta, list(self.frame_refs), self.frame_indices.copy(),
            self.source_domain, self.step_length_mean,
        )


def relative_actions(traj: Trajectory, t: int, horizon: int = 5) -> np.ndarray:
    """Poses ``t+1 .. t+horizon`` in the agent frame of pose ``t`` (odometry units)."""
    if t < 0 or t + horizon >= len(traj):
        raise OutOfRange(f"window [{t}, {t + horizon}] exceeds trajectory of length {len(traj)}")
    offsets = np.arange(1, horizon + 1)
    return kernels.relative_positions(traj.xy, traj.yaw, np.array([t]), offsets)[0]


def fit_step_length(traj: Trajectory) -> float:
    if len(traj) < 2:
        raise DegenerateTrajectory(f"trajectory {traj.id!r} has fewer than 2 poses")
    d = kernels.mean_step_length(traj.xy)
    if not d >= 1e-9:
        raise DegenerateTrajectory(f"trajectory {traj.id!r} is stationary (mean step {d:g})")
    traj.step_length_mean = d
    return d


def normalize_actions(actions, step_length: float) -> np.ndarray:
    if not step_length > 0:
        raise DegenerateTrajectory(f"step length must be positive, got {step_length!r}")
    return np.asarray(actions, dtype=np.float64).reshape(-1, 2) / step_length


def denormalize_actions(actions, robot_step: float) -> np.ndarray:
    if not robot_step > 0:
        raise InvalidStepLength(f"robot step length must be positive, got {robot_step!r}")
    return np.asarray(actions, dtype=np.float64).reshape(-1, 2) * robot_step


# ---------------------------------------------------------------------------
# pose logs and manifests


def read_pose_log(path) -> list[Pose3]:
    poses = []
    last = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(f"expected 8 fields, got {len(parts)}", path, lineno)
            try:
                t = int(parts[0])
                vals = [float(v) for v in parts[1:]]
            except ValueError as e:
                raise ParseError(str(e), path, lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", path, lineno)
            if last is not None and t <= last:
                raise ParseError(f"frame index {t} not increasing", path, lineno)
            last = t
            try:
                poses.append(Pose3(t, tuple(vals[:3]), tuple(vals[3:])))
            except InvalidQuaternion as e:
                raise ParseError(str(e), path, lineno) from None
    return poses


def write_pose_log(path, poses: Iterable[Pose3]):
    with open(path, "w") as fh:
        for p in poses:
            fh.write(" ".join([str(p.t)] + [repr(float(v)) for v in (*p.position, *p.rotation)]) + "\n")


@dataclass
class ManifestEntry:
    id: str
    pose_log: str
    frames: str | None = None
    detections: str | None = None
    source_domain: str = "walking"
    profile: str = "enu"
    frame_pattern: str = "{frame:06d}.jpg"


@dataclass
class Manifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def resolve(self, rel: str | None) -> Path | None:
        return None if rel is None else (self.root / rel)


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
        entries = [ManifestEntry(**e) for e in data.get("trajectories", [])]
    except (json.JSONDecodeError, TypeError) as e:
        raise ParseError(str(e), path) from None
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate trajectory ids", path)
    return Manifest(path.parent, entries)


def write_manifest(path, entries: Iterable[ManifestEntry]):
    from dataclasses import asdict

    Path(path).write_text(json.dumps({"trajectories": [asdict(e) for e in entries]}, indent=1, sort_keys=True))


def frame_ref(entry: ManifestEntry, frame_index: int, row: int) -> str:
    """Reference to the image or cached feature of one frame (relative to the manifest root)."""
    if entry.frames is None:
        return f"{entry.id}:{frame_index}"
    if entry.frames.endswith(".npy"):
        return f"feat:{entry.frames}#{row}"
    return "img:" + os.path.join(entry.frames, entry.frame_pattern.format(frame=frame_index))


def load_trajectory(manifest: Manifest, entry: ManifestEntry, frame_stride: int = 1) -> Trajectory:
    """Read, subsample and project one pose log, then fit its mean step length."""
    poses3 = read_pose_log(manifest.resolve(entry.pose_log))
    profile = PROFILES[entry.profile]
    rows = range(0, len(poses3), frame_stride)
    poses2 = [project_to_ground(poses3[r], profile) for r in rows]
    traj = Trajectory.from_poses(
        entry.id,
        poses2,
        frame_refs=[frame_ref(entry, poses3[r].t, r) for r in rows],
        frame_indices=np.array([poses3[r].t for r in rows], dtype=np.int64),
        source_domain=entry.source_domain,
    )
    fit_step_length(traj)
    return traj
