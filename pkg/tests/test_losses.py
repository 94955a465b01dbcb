import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from urbannav.errors import AllPairsDegenerate, NonFiniteLoss, ShapeMismatch
from urbannav.losses import (
    LossWeights,
    arrival_loss,
    feature_hallucination_loss,
    l1_loss,
    orientation_loss,
    total_loss,
)


def ori_oracle(pred, gt, eps=1e-8):
    per_sample = []
    for p_s, g_s in zip(pred, gt):
        cos = [float(p @ g) / (math.hypot(*p) * math.hypot(*g)) for p, g in zip(p_s, g_s) if math.hypot(*g) > eps]
        if cos:
            per_sample.append(sum(cos) / len(cos))
    return -sum(per_sample) / len(per_sample)


def test_values_match_numpy(rng):
    pred = rng.normal(size=(6, 5, 2))
    gt = rng.normal(size=(6, 5, 2))
    gt[0, 1] = 0.0
    gt[2] = 0.0
    tp, tg = torch.tensor(pred), torch.tensor(gt)
    assert l1_loss(tp, tg).item() == pytest.approx(np.abs(pred - gt).mean(), rel=1e-12)
    assert orientation_loss(tp, tg).item() == pytest.approx(ori_oracle(pred, gt), rel=1e-12)

    logit = rng.normal(size=8)
    label = rng.integers(0, 2, 8).astype(float)
    p = 1 / (1 + np.exp(-logit))
    bce = -(label * np.log(p) + (1 - label) * np.log(1 - p)).mean()
    assert arrival_loss(torch.tensor(logit), torch.tensor(label)).item() == pytest.approx(bce, rel=1e-10)

    h, f = rng.normal(size=(3, 5, 7)), rng.normal(size=(3, 5, 7))
    assert feature_hallucination_loss(torch.tensor(h), torch.tensor(f)).item() == pytest.approx(((h - f) ** 2).mean())


def test_orientation_perfect_and_opposite():
    g = torch.randn(4, 5, 2, dtype=torch.float64)
    assert orientation_loss(3 * g, g).item() == pytest.approx(-1.0)
    assert orientation_loss(-g, g).item() == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([1e-3, 1.0, 1e3]), st.integers(0, 2**31 - 1))
def test_orientation_scale_invariant(c, seed):
    g = torch.Generator().manual_seed(seed)
    pred = torch.randn(8, 5, 2, generator=g, dtype=torch.float64)
    gt = torch.randn(8, 5, 2, generator=g, dtype=torch.float64)
    assert abs(orientation_loss(c * pred, gt).item() - orientation_loss(pred, gt).item()) < 1e-12


def test_orientation_eps_boundary():
    pred = torch.ones(1, 2, 2, dtype=torch.float64)
    gt = torch.tensor([[[1e-8, 0.0], [0.0, 1.0]]], dtype=torch.float64)
    # the pair with norm exactly eps is excluded, leaving cos 45 deg
    assert orientation_loss(pred, gt, eps=1e-8).item() == pytest.approx(-math.sqrt(0.5), rel=1e-12)
    gt2 = torch.tensor([[[1.5e-8, 0.0], [0.0, 1.0]]], dtype=torch.float64)
    assert orientation_loss(pred, gt2, eps=1e-8).item() == pytest.approx(-math.sqrt(0.5), rel=1e-12)
    with pytest.raises(AllPairsDegenerate):
        orientation_loss(pred, torch.zeros_like(pred))


def test_orientation_zero_prediction_is_finite():
    pred = torch.zeros(2, 5, 2, dtype=torch.float64, requires_grad=True)
    loss = orientation_loss(pred, torch.randn(2, 5, 2, dtype=torch.float64))
    loss.backward()
    assert torch.isfinite(loss) and torch.isfinite(pred.grad).all()


def test_gradcheck_all_terms():
    g = torch.Generator().manual_seed(0)
    r = lambda *s: torch.randn(*s, generator=g, dtype=torch.float64, requires_grad=True)
    gt = torch.randn(3, 5, 2, generator=g, dtype=torch.float64)
    gt[0, 2] = 0.0
    assert torch.autograd.gradcheck(lambda p: l1_loss(p, gt), (r(3, 5, 2),))
    assert torch.autograd.gradcheck(lambda p: orientation_loss(p, gt), (r(3, 5, 2),))
    lab = torch.tensor([0.0, 1.0, 1.0], dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda z: arrival_loss(z, lab), (r(3),))
    fut = torch.randn(3, 5, 4, generator=g, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda h: feature_hallucination_loss(h, fut), (r(3, 5, 4),))


def test_feature_target_is_detached():
    h = torch.randn(2, 5, 4, requires_grad=True)
    f = torch.randn(2, 5, 4, requires_grad=True)
    feature_hallucination_loss(h, f).backward()
    assert f.grad is None and h.grad is not None


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        l1_loss(torch.zeros(2, 5, 2), torch.zeros(2, 4, 2))
    with pytest.raises(ShapeMismatch):
        arrival_loss(torch.zeros(3), torch.zeros(4))


def test_total_loss_composition():
    unit = {k: torch.tensor(1.0, dtype=torch.float64) for k in ("l1", "ori", "arr", "feat")}
    assert total_loss(unit).item() == 7.1
    assert total_loss(unit, hallucination=False).item() == 7.0
    assert total_loss(unit, orientation=False).item() == pytest.approx(2.1)
    partial = {k: v for k, v in unit.items() if k != "feat"}
    assert total_loss(partial, hallucination=False).item() == 7.0
    with pytest.raises(KeyError):
        total_loss(partial)
    assert total_loss(unit, LossWeights(0, 0, 0, 1)).item() == 1.0


def test_total_loss_nonfinite_names_term():
    parts = {"l1": torch.tensor(1.0), "ori": torch.tensor(float("nan")), "arr": torch.tensor(1.0),
             "feat": torch.tensor(1.0)}
    with pytest.raises(NonFiniteLoss) as e:
        total_loss(parts, batch_id=7)
    assert e.value.term == "ori" and e.value.batch_id == 7
    assert total_loss(parts, orientation=False).item() == pytest.approx(2.1)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossWeights(w_ori=-1)
