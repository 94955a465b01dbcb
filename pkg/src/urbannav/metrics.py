"""Offline evaluation: orientation errors, L2, arrival accuracy, stratified by scenario.

Report columns follow the benchmark layout: the six scenario cells, their
unweighted ``Mean``, and ``All`` (one pass over every sample).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import CountMismatch, DegeneratePair, EmptyAfterExclusion, ShapeMismatch
from .scenarios import SCENARIOS

EPS = 1e-8
COLUMNS = ("Mean", "Turn", "Crossing", "Detour", "Proximity", "Crowd", "Other", "All")
SCENARIO_COLUMNS = COLUMNS[1:7]


def aoe_step(pred_k, gt_k, eps: float = EPS) -> float:
    """Angle in degrees between one predicted and one true action."""
    p = np.asarray(pred_k, dtype=np.float64).reshape(1, 1, 2)
    g = np.asarray(gt_k, dtype=np.float64).reshape(1, 1, 2)
    angles, valid = kernels.orientation_errors(p, g, eps)
    if not valid[0, 0]:
        raise DegeneratePair("action norm below epsilon")
    return float(angles[0, 0])


def _as_batch(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shape {pred.shape} != {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    return pred, gt


def aoe(pred, gt, k: int, eps: float = EPS) -> float:
    """Average orientation error at step ``k`` (1-based) over samples, degrees."""
    pred, gt = _as_batch(pred, gt)
    angles, valid = kernels.orientation_errors(pred[:, k - 1 : k], gt[:, k - 1 : k], eps)
    if not valid.any():
        raise EmptyAfterExclusion(f"no valid pairs at step {k}")
    return float(angles[valid].mean())


def per_sample_peak(angles, valid, aggregator: str = "max", temperature: float = 5.0):
    """Per-sample peak orientation error; ``nan`` where no step is valid.

    ``aggregator="softmax"`` replaces the hard max by a softmax-weighted
    mean of the step errors (temperature in degrees).
    """
    masked = np.where(valid, angles, -np.inf)
    peak = masked.max(axis=1)
    if aggregator == "softmax":
        z = np.where(valid, (angles - np.where(np.isfinite(peak), peak, 0.0)[:, None]) / temperature, -np.inf)
        w = np.exp(z)
        with np.errstate(invalid="ignore"):
            peak = (w * angles).sum(axis=1) / w.sum(axis=1)
    elif aggregator != "max":
        raise ValueError(f"unknown aggregator {aggregator!r}")
    return np.where(valid.any(axis=1), peak, np.nan)


def maoe(pred, gt, eps: float = EPS, aggregator: str = "max", temperature: float = 5.0) -> float:
    """Mean over samples of the per-sample maximum step orientation error, degrees."""
    pred, gt = _as_batch(pred, gt)
    angles, valid = kernels.orientation_errors(pred, gt, eps)
    peaks = per_sample_peak(angles, valid, aggregator, temperature)
    ok = ~np.isnan(peaks)
    if not ok.any():
        raise EmptyAfterExclusion("no sample has a valid step")
    return float(peaks[ok].mean())


def l2_metric(pred, gt, step_length=1.0) -> float:
    """Mean waypoint distance, denormalized by ``step_length`` (scalar or per sample)."""
    pred, gt = _as_batch(pred, gt)
    per = np.sqrt(((pred - gt) ** 2).sum(-1)).mean(-1) * np.asarray(step_length, dtype=np.float64)
    return float(per.mean())


def arrival_accuracy(prob, labels, threshold: float = 0.5) -> float:
    prob = np.asarray(prob, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    return float(100.0 * ((prob > threshold) == labels).mean())


@dataclass
class CellMetrics:
    count: int
    l2: float
    aoe: list[float]
    maoe: float
    arrival: float
    excluded_pairs: int = 0


@dataclass
class MetricReport:
    cells: dict[str, CellMetrics]
    action_angle: str = "last"
    l2_convention: str = "per-step mean"
    aggregator: str = "max"
    horizon: int = 5
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "columns": list(COLUMNS),
            "action_angle": self.action_angle,
            "l2_convention": self.l2_convention,
            "aggregator": self.aggregator,
            "horizon": self.horizon,
            "notes": self.notes,
            "cells": {c: asdict(self.cells[c]) for c in COLUMNS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        cells = {c: CellMetrics(**d["cells"][c]) for c in COLUMNS}
        return cls(cells, d["action_angle"], d["l2_convention"], d["aggregator"], d["horizon"], d.get("notes", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=True)

    def rows(self) -> list[tuple[str, list[float]]]:
        out = [("L2 (m)", [self.cells[c].l2 for c in COLUMNS])]
        for k in range(self.horizon):
            out.append((f"AOE({k + 1}) (deg)", [self.cells[c].aoe[k] for c in COLUMNS]))
        out.append(("MAOE (deg)", [self.cells[c].maoe for c in COLUMNS]))
        out.append(("Arrival (%)", [self.cells[c].arrival for c in COLUMNS]))
        return out

    def render_text(self, proportions: dict[str, float] | None = None) -> str:
        head = ["Metric", *COLUMNS]
        body = []
        if proportions is not None:
            body.append(["Share"] + [""] + [f"{100 * proportions[s]:.0f}%" for s in SCENARIOS] + ["100%"])
        body.append(["Count", ""] + [str(self.cells[c].count) for c in COLUMNS[1:]])
        for name, vals in self.rows():
            body.append([name] + [f"{v:.2f}" for v in vals])
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
        fmt = lambda r: "  ".join([r[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(r[1:], widths[1:])])
        lines = [
            f"# action angle: {self.action_angle}; L2: {self.l2_convention} (m); peak aggregator: {self.aggregator}",
            fmt(head),
            *map(fmt, body),
        ]
        return "\n".join(lines) + "\n"


def _cell(angles, valid, pred, gt, step, prob, labels, idx, aggregator, temperature) -> CellMetrics:
    horizon = angles.shape[1]
    if len(idx) == 0:
        return CellMetrics(0, math.nan, [math.nan] * horizon, math.nan, math.nan, 0)
    a, v = angles[idx], valid[idx]
    aoes = [float(a[v[:, k], k].mean()) if v[:, k].any() else math.nan for k in range(horizon)]
    peaks = per_sample_peak(a, v, aggregator, temperature)
    ok = ~np.isnan(peaks)
    return CellMetrics(
        count=int(len(idx)),
        l2=float((np.sqrt(((pred[idx] - gt[idx]) ** 2).sum(-1)).mean(-1) * step[idx]).mean()),
        aoe=aoes,
        maoe=float(peaks[ok].mean()) if ok.any() else math.nan,
        arrival=arrival_accuracy(prob[idx], labels[idx]),
        excluded_pairs=int((~v).sum()),
    )


def _nanmean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(sum(vals) / len(vals)) if vals else math.nan


def evaluate(samples: Sequence, pred_actions, arrival_prob, *, action_angle: str = "last",
             eps: float = EPS, aggregator: str = "max", temperature: float = 5.0) -> MetricReport:
    """Fill every report cell from tagged samples and per-sample predictions.

    ``pred_actions`` is ``(n, horizon, 2)`` in normalized units and
    ``arrival_prob`` ``(n,)``. Untagged samples count toward Other.
    """
    pred = np.asarray(pred_actions, dtype=np.float64)
    prob = np.asarray(arrival_prob, dtype=np.float64).reshape(-1)
    n = len(samples)
    if len(pred) != n or len(prob) != n:
        raise CountMismatch(f"{n} samples but {len(pred)} action and {len(prob)} arrival predictions")
    horizon = pred.shape[1] if pred.ndim == 3 else 5
    gt = np.array([s.future_actions for s in samples], dtype=np.float64).reshape(n, horizon, 2)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"predictions {pred.shape} vs ground truth {gt.shape}")
    step = np.array([s.step_length for s in samples], dtype=np.float64)
    labels = np.array([s.arrival_label for s in samples], dtype=bool)
    angles, valid = kernels.orientation_errors(pred, gt, eps)

    tag_matrix = np.zeros((n, len(SCENARIOS)), dtype=bool)
    for i, s in enumerate(samples):
        if s.scenario_tags is None:
            tag_matrix[i, -1] = True
        else:
            tag_matrix[i] = [getattr(s.scenario_tags, name) for name in SCENARIOS]

    args = (angles, valid, pred, gt, step, prob, labels)
    cells = {}
    for j, col in enumerate(SCENARIO_COLUMNS):
        cells[col] = _cell(*args, np.flatnonzero(tag_matrix[:, j]), aggregator, temperature)
    cells["All"] = _cell(*args, np.arange(n), aggregator, temperature)
    scen = [cells[c] for c in SCENARIO_COLUMNS]
    cells["Mean"] = CellMetrics(
        count=sum(c.count for c in scen),
        l2=_nanmean(c.l2 for c in scen),
        aoe=[_nanmean(c.aoe[k] for c in scen) for k in range(horizon)],
        maoe=_nanmean(c.maoe for c in scen),
        arrival=_nanmean(c.arrival for c in scen),
        excluded_pairs=sum(c.excluded_pairs for c in scen),
    )
    return MetricReport(cells, action_angle=action_angle, aggregator=aggregator, horizon=horizon)
