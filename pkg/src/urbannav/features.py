"""Frozen per-frame feature providers.

A provider maps frame references (strings stored in samples) to feature
tokens of the model's token dimension. Two are built in:

``synthetic``
    Deterministic and cheap. ``feat:<file.npy>#<row>`` references are
    projected from low-dimensional scene descriptors by a fixed seeded
    random matrix; any other reference gets a pseudo-random token seeded
    by its hash.
``dinov2_vitb14``
    A ViT-B/14 image encoder whose module names match the public DINOv2
    checkpoints, so released weights load directly. Without a weights
    file it is randomly initialised (useful for sizing only).
"""
from __future__ import annotations

import hashlib
import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

DESCRIPTOR_DIM = 14

# center-crop sizes per source domain (height, width), divisible by the patch size
RESOLUTIONS = {"walking": (350, 630), "driving": (350, 630), "teleop": (392, 392)}


class FeatureProvider(nn.Module):
    frozen = True
    dim: int

    def encode(self, refs: list[str]) -> torch.Tensor:
        raise NotImplementedError

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self


def _ref_seed(ref: str) -> int:
    return int.from_bytes(hashlib.sha256(ref.encode()).digest()[:8], "little")


class SyntheticFeatureProvider(FeatureProvider):
    def __init__(self, dim: int, seed: int = 0, root: str | Path | None = None,
                 descriptor_dim: int = DESCRIPTOR_DIM):
        super().__init__()
        self.dim = dim
        self.root = Path(root) if root is not None else None
        g = torch.Generator().manual_seed(seed)
        proj = torch.randn(dim, descriptor_dim, generator=g, dtype=torch.float64) / math.sqrt(descriptor_dim)
        self.projection = nn.Parameter(proj.float())
        self._cache: dict[str, np.ndarray] = {}
        self.freeze()

    def _descriptor(self, ref: str) -> np.ndarray | None:
        if not ref.startswith("feat:"):
            return None
        path, _, row = ref[5:].rpartition("#")
        full = str(self.root / path) if self.root is not None else path
        if full not in self._cache:
            self._cache[full] = np.load(full, mmap_mode="r")
        return np.asarray(self._cache[full][int(row)], dtype=np.float32)

    def _random_token(self, ref: str) -> np.ndarray:
        rng = np.random.default_rng(_ref_seed(ref))
        return rng.standard_normal(self.dim).astype(np.float32)

    def encode(self, refs: list[str]) -> torch.Tensor:
        desc_rows, desc_idx, rand_rows, rand_idx = [], [], [], []
        for i, ref in enumerate(refs):
            d = self._descriptor(ref)
            if d is None:
                rand_rows.append(self._random_token(ref))
                rand_idx.append(i)
            else:
                desc_rows.append(d)
                desc_idx.append(i)
        out = torch.zeros(len(refs), self.dim, dtype=self.projection.dtype)
        if desc_rows:
            desc = torch.from_numpy(np.stack(desc_rows))
            out = out.index_put((torch.tensor(desc_idx),), desc @ self.projection.T)
        if rand_rows:
            out = out.index_put((torch.tensor(rand_idx),), torch.from_numpy(np.stack(rand_rows)))
        return out


# ---------------------------------------------------------------------------
# ViT-B/14


class _LayerScale(nn.Module):
    def __init__(self, dim, init=1e-5):
        super().__init__()
        self.gamma = nn.Parameter(torch.full((dim,), init))

    def forward(self, x):
        return x * self.gamma


class _Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        x = nn.functional.scaled_dot_product_attention(q, k, v)
        return self.proj(x.transpose(1, 2).reshape(b, n, c))


class _Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class _Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = _Attention(dim, heads)
        self.ls1 = _LayerScale(dim)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = _Mlp(dim, dim * mlp_ratio)
        self.ls2 = _LayerScale(dim)

    def forward(self, x):
        x = x + self.ls1(self.attn(self.norm1(x)))
        return x + self.ls2(self.mlp(self.norm2(x)))


class _PatchEmbed(nn.Module):
    def __init__(self, patch, dim):
        super().__init__()
        self.proj = nn.Conv2d(3, dim, kernel_size=patch, stride=patch)

    def forward(self, x):
        return self.proj(x).flatten(2).transpose(1, 2)


class VitBackbone(nn.Module):
    def __init__(self, dim=768, depth=12, heads=12, patch=14, grid=37):
        super().__init__()
        self.patch = patch
        self.grid = grid
        self.patch_embed = _PatchEmbed(patch, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.mask_token = nn.Parameter(torch.zeros(1, dim))
        self.pos_embed = nn.Parameter(torch.randn(1, 1 + grid * grid, dim) * 0.02)
        self.blocks = nn.ModuleList(_Block(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim, eps=1e-6)

    def _pos(self, h, w):
        cls_pos, grid_pos = self.pos_embed[:, :1], self.pos_embed[:, 1:]
        if (h, w) == (self.grid, self.grid):
            return self.pos_embed
        g = grid_pos.reshape(1, self.grid, self.grid, -1).permute(0, 3, 1, 2)
        g = nn.functional.interpolate(g, size=(h, w), mode="bicubic", align_corners=False)
        return torch.cat([cls_pos, g.permute(0, 2, 3, 1).reshape(1, h * w, -1)], dim=1)

    def forward(self, images):
        h, w = images.shape[-2] // self.patch, images.shape[-1] // self.patch
        x = self.patch_embed(images)
        x = torch.cat([self.cls_token.expand(len(x), -1, -1), x], dim=1) + self._pos(h, w)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)[:, 0]


class VitFeatureProvider(FeatureProvider):
    _MEAN = (0.485, 0.456, 0.406)
    _STD = (0.229, 0.224, 0.225)

    def __init__(self, weights: str | Path | None = None, root: str | Path | None = None,
                 resolution: tuple[int, int] = RESOLUTIONS["teleop"]):
        super().__init__()
        self.dim = 768
        self.root = Path(root) if root is not None else None
        self.resolution = tuple(resolution)
        self.backbone = VitBackbone()
        if weights is not None:
            self.backbone.load_state_dict(torch.load(weights, map_location="cpu"), strict=False)
        self.freeze()

    def _load(self, ref: str) -> torch.Tensor:
        from PIL import Image

        path = ref[4:] if ref.startswith("img:") else ref
        if self.root is not None:
            path = self.root / path
        img = Image.open(path).convert("RGB")
        th, tw = self.resolution
        scale = max(th / img.height, tw / img.width)
        if scale > 1:
            img = img.resize((math.ceil(img.width * scale), math.ceil(img.height * scale)))
        left, top = (img.width - tw) // 2, (img.height - th) // 2
        img = img.crop((left, top, left + tw, top + th))
        x = torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0).permute(2, 0, 1)
        mean = torch.tensor(self._MEAN).view(3, 1, 1)
        std = torch.tensor(self._STD).view(3, 1, 1)
        return (x - mean) / std

    @torch.no_grad()
    def encode(self, refs: list[str]) -> torch.Tensor:
        if not refs:
            return torch.zeros(0, self.dim)
        return self.backbone(torch.stack([self._load(r) for r in refs]))


def make_provider(backbone_id: str, dim: int, *, seed: int = 0, root=None, weights=None,
                  resolution=None) -> FeatureProvider:
    if backbone_id == "synthetic":
        return SyntheticFeatureProvider(dim, seed=seed, root=root)
    if backbone_id == "dinov2_vitb14":
        if dim != 768:
            raise ValueError("dinov2_vitb14 features are 768-dimensional; set token_dim=768")
        return VitFeatureProvider(weights, root, resolution or RESOLUTIONS["teleop"])
    raise ValueError(f"unknown backbone {backbone_id!r}")
