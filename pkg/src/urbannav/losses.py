"""Training objectives: action L1, orientation (negative cosine), arrival BCE,
feature-hallucination MSE, and their weighted sum."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import AllPairsDegenerate, NonFiniteLoss, ShapeMismatch

ORI_EPS = 1e-8
TERMS = ("l1", "ori", "arr", "feat")


@dataclass
class LossWeights:
    w_l1: float = 1.0
    w_ori: float = 5.0
    w_arr: float = 1.0
    w_feat: float = 0.1

    def __post_init__(self):
        for name in ("w_l1", "w_ori", "w_arr", "w_feat"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")


def _check_same(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {tuple(a.shape)} != {tuple(b.shape)}")


def l1_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check_same(pred, gt)
    return (pred - gt).abs().mean()


def orientation_mask(gt: torch.Tensor, eps: float = ORI_EPS) -> torch.Tensor:
    return gt.norm(dim=-1) > eps


def orientation_loss(pred: torch.Tensor, gt: torch.Tensor, eps: float = ORI_EPS) -> torch.Tensor:
    """Mean negative cosine similarity between predicted and true actions.

    Inputs are ``(..., k, 2)``. Steps whose ground-truth action has norm
    ``<= eps`` are left out; each sample averages over its remaining
    steps, then samples with at least one step are averaged.
    """
    _check_same(pred, gt)
    pred = pred.reshape(-1, *pred.shape[-2:])
    gt = gt.reshape(-1, *gt.shape[-2:])
    valid = orientation_mask(gt, eps)
    if not bool(valid.any()):
        raise AllPairsDegenerate("every ground-truth action is below the orientation epsilon")
    pn = pred.norm(dim=-1).clamp_min(torch.finfo(pred.dtype).tiny)
    gn = gt.norm(dim=-1).clamp_min(eps)
    cos = (pred * gt).sum(-1) / (pn * gn)
    cos = torch.where(valid, cos, torch.zeros_like(cos))
    per_step = valid.sum(-1)
    has = per_step > 0
    per_sample = cos.sum(-1)[has] / per_step[has]
    return -per_sample.mean()


def arrival_loss(logit: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    label = torch.as_tensor(label, dtype=logit.dtype, device=logit.device)
    _check_same(logit, label)
    return F.binary_cross_entropy_with_logits(logit, label)


def feature_hallucination_loss(hallucinated: torch.Tensor, future_tokens: torch.Tensor) -> torch.Tensor:
    _check_same(hallucinated, future_tokens)
    return F.mse_loss(hallucinated, future_tokens.detach())


def total_loss(parts: dict, weights: LossWeights | None = None, *, orientation: bool = True,
               hallucination: bool = True, batch_id=None):
    """Weighted sum of the loss terms in ``parts`` (keys ``l1``, ``ori``, ``arr``, ``feat``).

    Switched-off terms are skipped entirely and may be absent from ``parts``.
    """
    w = weights or LossWeights()
    coef = {"l1": w.w_l1, "ori": w.w_ori, "arr": w.w_arr, "feat": w.w_feat}
    active = [t for t in TERMS if (t != "ori" or orientation) and (t != "feat" or hallucination)]
    total = 0.0
    for term in active:
        value = parts[term]
        finite = bool(torch.isfinite(value).all()) if torch.is_tensor(value) else math.isfinite(value)
        if not finite:
            raise NonFiniteLoss(term, batch_id)
        total = total + coef[term] * value
    return total
