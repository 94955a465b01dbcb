"""Figures: one sample in its agent frame, or one closed-loop trial."""
from __future__ import annotations


import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE = {"format": "png", "dpi": 100, "metadata": {"Software": None}}


def _fit_limits(ax, points: np.ndarray, margin: float = 0.1):
    lo, hi = points.min(axis=0), points.max(axis=0)
    pad = np.maximum((hi - lo) * margin, 0.5)
    ax.set_xlim(lo[0] - pad[0], hi[0] + pad[0])
    ax.set_ylim(lo[1] - pad[1], hi[1] + pad[1])


def plot_sample(sample, pred_actions=None, out=None, title: str | None = None):
    """Past positions, target, true and predicted actions, with the agent at the origin facing +y."""
    past = np.asarray(sample.past_positions)
    gt = np.asarray(sample.future_actions)
    target = np.asarray(sample.target_position)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(past[:, 0], past[:, 1], "o-", color="0.5", label="input trajectory")
    ax.plot(*np.vstack([[0, 0], gt]).T, "o-", color="tab:green", label="ground-truth actions")
    pts = [past, gt, target[None], np.zeros((1, 2))]
    if pred_actions is not None:
        pred = np.asarray(pred_actions)
        ax.plot(*np.vstack([[0, 0], pred]).T, "s--", color="tab:red", label="predicted actions")
        pts.append(pred)
    ax.plot(*target, "*", color="tab:blue", markersize=14, label="target")
    ax.plot(0, 0, marker=(3, 0, 0), color="k", markersize=12, linestyle="none", label="agent")
    _fit_limits(ax, np.vstack(pts))
    ax.set_aspect("equal", adjustable="box")
    ax.set_xlabel("x (right, normalized)")
    ax.set_ylabel("y (forward, normalized)")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title, fontsize=9)
    if out is not None:
        fig.savefig(out, **_SAVE)
    return fig, ax


def plot_trial(path_xy, course, out=None, outcome: str | None = None):
    path_xy = np.asarray(path_xy)
    line = course.polyline
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(line[:, 0], line[:, 1], "o--", color="0.5", label="route")
    ax.plot(path_xy[:, 0], path_xy[:, 1], "-", color="tab:red", label="agent path")
    ax.plot(line[-1, 0], line[-1, 1], "*", color="tab:blue", markersize=14, label="target")
    ax.plot(course.start.x, course.start.y, "^", color="k", markersize=10, label="start")
    _fit_limits(ax, np.vstack([path_xy, line]), margin=0.05)
    ax.set_aspect("equal", adjustable="box")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"{course.id} ({course.category})" + (f": {outcome}" if outcome else ""), fontsize=9)
    if out is not None:
        fig.savefig(out, **_SAVE)
    return fig, ax


def close(fig):
    plt.close(fig)
