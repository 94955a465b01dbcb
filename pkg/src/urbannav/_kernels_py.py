"""Numpy implementations of the compiled kernels (same signatures)."""
import numpy as np


def relative_positions(xy, yaw, anchors, offsets):
    c = np.cos(yaw[anchors])[:, None]
    s = np.sin(yaw[anchors])[:, None]
    targets = anchors[:, None] + offsets
    d = xy[targets] - xy[anchors][:, None, :]
    out = np.empty(offsets.shape + (2,), dtype=np.float64)
    out[..., 0] = c * d[..., 0] + s * d[..., 1]
    out[..., 1] = -s * d[..., 0] + c * d[..., 1]
    return out


def mean_step_length(xy):
    d = np.diff(xy, axis=0)
    return float(np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2).sum() / (len(xy) - 1))


def orientation_errors(pred, gt, eps):
    pn2 = pred[..., 0] ** 2 + pred[..., 1] ** 2
    gn2 = gt[..., 0] ** 2 + gt[..., 1] ** 2
    valid = (pn2 > eps * eps) & (gn2 > eps * eps)
    dot = pred[..., 0] * gt[..., 0] + pred[..., 1] * gt[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.clip(dot / np.sqrt(pn2 * gn2), -1.0, 1.0)
    angles = np.where(valid, np.degrees(np.arccos(np.where(valid, r, 1.0))), 0.0)
    return angles, valid
