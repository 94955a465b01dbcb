"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension ``urbannav._kernels`` is used when it imports;
otherwise (or when ``URBANNAV_PURE_PYTHON=1``) the numpy versions in
``urbannav._kernels_py`` are used. ``BACKEND`` names the active one.

All functions take float64 arrays in the ground plane. Yaw follows the
Pose2 convention: counterclockwise rotation of the body frame, with the
body's forward axis along +y.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("URBANNAV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found


def relative_positions(xy, yaw, anchors, offsets, impl=None):
    """Positions of poses ``anchors[i] + offsets[i, j]`` in the agent frame of pose ``anchors[i]``.

    Returns an ``(m, o, 2)`` array. Offsets may be negative (past poses).
    """
    impl = impl or _impl
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    yaw = np.ascontiguousarray(yaw, dtype=np.float64)
    anchors = np.ascontiguousarray(anchors, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if offsets.ndim == 1:
        offsets = np.ascontiguousarray(np.broadcast_to(offsets, (len(anchors), len(offsets))))
    if xy.ndim != 2 or xy.shape[1] != 2 or yaw.shape != (len(xy),):
        raise ValueError("xy must be (L, 2) and yaw (L,)")
    if offsets.shape[0] != len(anchors):
        raise ValueError("offsets must have one row per anchor")
    if len(anchors):
        targets = anchors[:, None] + offsets
        if anchors.min() < 0 or anchors.max() >= len(xy) or (
            targets.size and (targets.min() < 0 or targets.max() >= len(xy))
        ):
            raise IndexError("pose index out of range")
    return impl.relative_positions(xy, yaw, anchors, offsets)


def mean_step_length(xy, impl=None) -> float:
    impl = impl or _impl
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    if xy.ndim != 2 or xy.shape[1] != 2 or len(xy) < 2:
        raise ValueError("need an (L, 2) array with L >= 2")
    return float(impl.mean_step_length(xy))


def orientation_errors(pred, gt, eps=1e-8, impl=None):
    """Per-pair angle (degrees) between predicted and ground-truth actions.

    Returns ``(angles, valid)`` of shape ``(n, k)``; pairs where either
    vector has norm ``<= eps`` are invalid and carry angle 0.
    """
    impl = impl or _impl
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    gt = np.ascontiguousarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[2] != 2:
        raise ValueError(f"expected matching (n, k, 2) arrays, got {pred.shape} and {gt.shape}")
    return impl.orientation_errors(pred, gt, float(eps))
