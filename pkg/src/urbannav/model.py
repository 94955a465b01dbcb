"""Waypoint policy: image tokens plus one coordinate token through a transformer.

Sequence layout: ``k`` projected image tokens followed by a single
coordinate token (``k`` past positions and the target, encoded
together). The output at image position ``i`` is both the hallucinated
feature of future frame ``i`` and, through a shared head, action ``i``;
the output at the coordinate position feeds the arrival head.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import torch
from torch import nn

from .errors import CheckpointMismatch, NonFiniteInput, ShapeMismatch
from .features import FeatureProvider, make_provider

CHECKPOINT_SCHEMA = 1


@dataclass
class ModelConfig:
    context: int = 5
    horizon: int = 5
    token_dim: int = 768
    num_layers: int = 16
    num_heads: int = 8
    ffn_dim: int = 3072
    fourier_freqs: int = 6
    coord_repr: str = "polar"
    backbone_id: str = "synthetic"
    backbone_weights: str | None = None
    provider_seed: int = 0
    head_hidden: list[int] = field(default_factory=lambda: [2048, 2048])
    coord_hidden: int = 768
    dropout: float = 0.0

    def __post_init__(self):
        if self.token_dim % self.num_heads:
            raise ValueError("token_dim must be divisible by num_heads")
        if self.context < 1 or self.horizon < 1:
            raise ValueError("context and horizon must be >= 1")
        if self.context != self.horizon:
            raise ValueError("each image-token output decodes one action; context must equal horizon")
        if self.coord_repr != "polar":
            raise ValueError(f"unsupported coordinate representation {self.coord_repr!r}")
        self.head_hidden = list(self.head_hidden)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


class PolicyOutput(NamedTuple):
    actions: torch.Tensor  # (B, horizon, 2)
    arrival_logit: torch.Tensor  # (B,)
    hallucinated: torch.Tensor  # (B, context, token_dim)


def coordinate_features(positions: torch.Tensor, freqs: int) -> torch.Tensor:
    """Polar encoding of ``(..., 2)`` points: ``[r, log1p(r), sin(2^j t), cos(2^j t)]``.

    ``t`` is the angle from +y toward +x; the origin maps to ``t = 0``.
    """
    x, y = positions[..., 0], positions[..., 1]
    r = torch.sqrt(x * x + y * y)
    theta = torch.atan2(x, y)
    scales = (2.0 ** torch.arange(freqs, dtype=positions.dtype, device=positions.device))
    ang = theta[..., None] * scales
    return torch.cat([r[..., None], torch.log1p(r)[..., None], torch.sin(ang), torch.cos(ang)], dim=-1)


def _mlp(sizes: list[int], dropout: float = 0.0) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.GELU())
            if dropout:
                layers.append(nn.Dropout(dropout))
    return nn.Sequential(*layers)


class CoordinateEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.freqs = cfg.fourier_freqs
        n_points = cfg.context + 1
        self.in_dim = n_points * (2 + 2 * cfg.fourier_freqs)
        self.net = _mlp([self.in_dim, cfg.coord_hidden, cfg.token_dim])

    def forward(self, past: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        pts = torch.cat([past, target[:, None, :]], dim=1)
        return self.net(coordinate_features(pts, self.freqs).flatten(1))


class PolicyNet(nn.Module):
    def __init__(self, cfg: ModelConfig, feature_dim: int | None = None):
        super().__init__()
        self.cfg = cfg
        d = cfg.token_dim
        self.obs_proj = nn.Linear(feature_dim or d, d)
        self.coord_encoder = CoordinateEncoder(cfg)
        self.pos_embed = nn.Parameter(torch.randn(1, cfg.context + 1, d) * 0.02)
        layer = nn.TransformerEncoderLayer(
            d, cfg.num_heads, cfg.ffn_dim, cfg.dropout, activation="gelu", batch_first=True, norm_first=True
        )
        self.trunk = nn.TransformerEncoder(layer, cfg.num_layers, enable_nested_tensor=False)
        self.out_norm = nn.LayerNorm(d)
        self.action_head = _mlp([d, *cfg.head_hidden, 2], cfg.dropout)
        self.arrival_head = _mlp([d, *cfg.head_hidden, 1], cfg.dropout)

    def forward(self, obs_tokens: torch.Tensor, past: torch.Tensor, target: torch.Tensor) -> PolicyOutput:
        k = self.cfg.context
        if obs_tokens.ndim != 3 or obs_tokens.shape[1] != k:
            raise ShapeMismatch(f"expected (B, {k}, D) image tokens, got {tuple(obs_tokens.shape)}")
        if past.shape[1:] != (k, 2) or target.shape[1:] != (2,) or len(past) != len(obs_tokens):
            raise ShapeMismatch("past positions must be (B, k, 2) and target (B, 2)")
        if not (torch.isfinite(past).all() and torch.isfinite(target).all()):
            raise NonFiniteInput("non-finite coordinates")
        x = torch.cat([self.obs_proj(obs_tokens), self.coord_encoder(past, target)[:, None]], dim=1)
        x = self.out_norm(self.trunk(x + self.pos_embed))
        img = x[:, :k]
        return PolicyOutput(self.action_head(img), self.arrival_head(x[:, k]).squeeze(-1), img)


def count_parameters(model: nn.Module | ModelConfig, provider: FeatureProvider | None = None) -> tuple[int, int]:
    """``(total, trainable)`` parameter counts; a config builds net and provider first."""
    if isinstance(model, ModelConfig):
        cfg = model
        provider = provider or make_provider(cfg.backbone_id, cfg.token_dim, seed=cfg.provider_seed)
        model = PolicyNet(cfg, provider.dim)
    mods = [model] + ([provider] if provider is not None else [])
    params = {id(p): p for m in mods for p in m.parameters()}.values()
    return sum(p.numel() for p in params), sum(p.numel() for p in params if p.requires_grad)


def save_checkpoint(path, net: PolicyNet, meta: dict | None = None):
    torch.save(
        {
            "schema_version": CHECKPOINT_SCHEMA,
            "model_config": asdict(net.cfg),
            "feature_dim": net.obs_proj.in_features,
            "state_dict": net.state_dict(),
            "meta": meta or {},
        },
        Path(path),
    )


def load_checkpoint(path) -> tuple[PolicyNet, dict]:
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("schema_version") != CHECKPOINT_SCHEMA:
        raise CheckpointMismatch(f"{path}: unsupported checkpoint schema")
    cfg = ModelConfig.from_dict(blob["model_config"])
    net = PolicyNet(cfg, blob["feature_dim"])
    try:
        net.load_state_dict(blob["state_dict"])
    except RuntimeError as e:
        raise CheckpointMismatch(str(e)) from None
    return net, blob["meta"]
