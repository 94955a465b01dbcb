import math

import numpy as np
import pytest
import torch

from urbannav.errors import CheckpointMismatch, NonFiniteInput, ShapeMismatch
from urbannav.features import SyntheticFeatureProvider, VitBackbone, make_provider
from urbannav.model import (
    ModelConfig,
    PolicyNet,
    coordinate_features,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)


def _inputs(cfg, b=3, seed=0, dim=None):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(b, cfg.context, dim or cfg.token_dim, generator=g),
            torch.randn(b, cfg.context, 2, generator=g), torch.randn(b, 2, generator=g))


def test_output_shapes(tiny_cfg):
    torch.manual_seed(0)
    out = PolicyNet(tiny_cfg)(*_inputs(tiny_cfg))
    assert out.actions.shape == (3, 5, 2)
    assert out.arrival_logit.shape == (3,)
    assert out.hallucinated.shape == (3, 5, 32)


def test_feature_dim_projection(tiny_cfg):
    net = PolicyNet(tiny_cfg, feature_dim=48)
    assert net(*_inputs(tiny_cfg, dim=48)).actions.shape == (3, 5, 2)


def test_input_validation(tiny_cfg):
    net = PolicyNet(tiny_cfg)
    obs, past, tgt = _inputs(tiny_cfg)
    with pytest.raises(ShapeMismatch):
        net(obs[:, :4], past, tgt)
    with pytest.raises(ShapeMismatch):
        net(obs, past[:, :, :1], tgt)
    tgt[0, 0] = math.nan
    with pytest.raises(NonFiniteInput):
        net(obs, past, tgt)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(token_dim=30, num_heads=8)
    with pytest.raises(ValueError):
        ModelConfig(context=4)
    with pytest.raises(ValueError):
        ModelConfig(coord_repr="cartesian")
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"depth": 3})


def test_coordinate_features():
    pts = torch.tensor([[0.0, 2.0], [1.0, 0.0], [0.0, 0.0]], dtype=torch.float64)
    f = coordinate_features(pts, 6)
    assert f.shape == (3, 14)
    assert f[0, 0] == 2.0 and f[0, 1] == pytest.approx(math.log(3.0))
    # angle from +y toward +x: (1, 0) sits at +90 degrees
    assert f[1, 2].item() == pytest.approx(1.0) and f[1, 8].item() == pytest.approx(0.0, abs=1e-12)
    assert torch.isfinite(f).all()


def test_rotation_of_inputs_changes_output(tiny_cfg):
    torch.manual_seed(0)
    net = PolicyNet(tiny_cfg)
    obs, past, tgt = _inputs(tiny_cfg, b=1)
    a = net(obs, past, tgt).actions
    b = net(obs, past, -tgt).actions
    assert not torch.allclose(a, b)


def test_deterministic(tiny_cfg):
    outs = []
    for _ in range(2):
        torch.manual_seed(7)
        outs.append(PolicyNet(tiny_cfg)(*_inputs(tiny_cfg)).actions)
    assert torch.equal(outs[0], outs[1])


def test_checkpoint_round_trip(tmp_path, tiny_cfg):
    torch.manual_seed(0)
    net = PolicyNet(tiny_cfg, feature_dim=40)
    save_checkpoint(tmp_path / "c.pt", net, {"note": 1})
    back, meta = load_checkpoint(tmp_path / "c.pt")
    assert meta == {"note": 1} and back.cfg == tiny_cfg
    x = _inputs(tiny_cfg, dim=40)
    net.eval()
    assert torch.equal(net(*x).actions, back(*x).actions)

    torch.save({"schema_version": 0}, tmp_path / "old.pt")
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "old.pt")
    blob = torch.load(tmp_path / "c.pt", weights_only=False)
    blob["state_dict"].pop("pos_embed")
    torch.save(blob, tmp_path / "bad.pt")
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "bad.pt")


def test_synthetic_provider(tmp_path):
    desc = np.random.default_rng(0).normal(size=(4, 14)).astype(np.float32)
    np.save(tmp_path / "f.npy", desc)
    p = SyntheticFeatureProvider(16, seed=1, root=tmp_path)
    assert all(not q.requires_grad for q in p.parameters())
    out = p.encode(["feat:f.npy#2", "other:1", "feat:f.npy#2"])
    assert out.shape == (3, 16)
    assert torch.equal(out[0], out[2])
    expected = torch.from_numpy(desc[2]) @ p.projection.T
    assert torch.allclose(out[0], expected)
    again = SyntheticFeatureProvider(16, seed=1, root=tmp_path).encode(["other:1"])
    assert torch.equal(again[0], out[1])
    with pytest.raises(ValueError):
        make_provider("resnet", 16)


def test_vit_backbone_matches_reference_size():
    vit = VitBackbone()
    assert sum(p.numel() for p in vit.parameters()) == 86_580_480
    names = dict(vit.named_parameters())
    for key in ("cls_token", "pos_embed", "patch_embed.proj.weight", "blocks.11.attn.qkv.weight",
                "blocks.0.ls1.gamma", "norm.weight"):
        assert key in names
    with torch.no_grad():
        assert vit(torch.zeros(1, 3, 56, 56)).shape == (1, 768)


def test_default_parameter_counts():
    total, trainable = count_parameters(ModelConfig())
    assert trainable == 126_207_235
    assert abs(trainable - 127e6) / 127e6 < 0.01
    vit_total, vit_trainable = count_parameters(ModelConfig(backbone_id="dinov2_vitb14"))
    assert vit_trainable == trainable
    assert abs(vit_total - 214e6) / 214e6 < 0.01
