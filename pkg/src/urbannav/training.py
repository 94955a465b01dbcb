"""Optimization loop, fine-tuning, checkpointing and batched inference."""
from __future__ import annotations

import copy
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import metrics
from .config import TrainConfig
from .dataset import NavigationSample
from .errors import AllPairsDegenerate, CheckpointMismatch, DataEmpty
from .features import FeatureProvider, make_provider
from .losses import (
    arrival_loss,
    feature_hallucination_loss,
    l1_loss,
    orientation_loss,
    total_loss,
)
from .model import ModelConfig, PolicyNet, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

LOG_HEADER = "# step epoch l1 ori arr feat total lr"


@dataclass
class Batch:
    obs: torch.Tensor  # (B, k, D)
    future: torch.Tensor  # (B, h, D)
    past: torch.Tensor  # (B, k, 2)
    target: torch.Tensor  # (B, 2)
    actions: torch.Tensor  # (B, h, 2)
    arrival: torch.Tensor  # (B,)


class TensorData:
    """Samples as tensors, with each distinct frame encoded once by the frozen provider."""

    def __init__(self, samples: Sequence[NavigationSample], provider: FeatureProvider, chunk: int = 512):
        if not samples:
            raise DataEmpty("no samples")
        refs: dict[str, int] = {}
        for s in samples:
            for r in (*s.past_frame_refs, *s.future_frame_refs):
                refs.setdefault(r, len(refs))
        names = list(refs)
        with torch.no_grad():
            parts = [provider.encode(names[i : i + chunk]) for i in range(0, len(names), chunk)]
        self.features = torch.cat(parts).float()
        self.obs_idx = torch.tensor([[refs[r] for r in s.past_frame_refs] for s in samples])
        self.fut_idx = torch.tensor([[refs[r] for r in s.future_frame_refs] for s in samples])
        self.past = torch.tensor(np.array([s.past_positions for s in samples]), dtype=torch.float32)
        self.target = torch.tensor(np.array([s.target_position for s in samples]), dtype=torch.float32)
        self.actions = torch.tensor(np.array([s.future_actions for s in samples]), dtype=torch.float32)
        self.arrival = torch.tensor([float(s.arrival_label) for s in samples])

    def __len__(self):
        return len(self.past)

    def batch(self, idx: torch.Tensor) -> Batch:
        return Batch(
            self.features[self.obs_idx[idx]], self.features[self.fut_idx[idx]],
            self.past[idx], self.target[idx], self.actions[idx], self.arrival[idx],
        )


def compute_parts(net: PolicyNet, b: Batch, cfg: TrainConfig) -> dict[str, torch.Tensor]:
    out = net(b.obs, b.past, b.target)
    zero = out.actions.new_zeros(())
    parts = {"l1": l1_loss(out.actions, b.actions), "arr": arrival_loss(out.arrival_logit, b.arrival)}
    if cfg.orientation_loss:
        try:
            parts["ori"] = orientation_loss(out.actions, b.actions)
        except AllPairsDegenerate:
            parts["ori"] = zero
    else:
        parts["ori"] = zero
    parts["feat"] = feature_hallucination_loss(out.hallucinated, b.future) if cfg.hallucination else zero
    return parts


def _lr_lambda(cfg: TrainConfig, total_steps: int):
    if cfg.schedule == "constant" or total_steps <= 1:
        return lambda step: 1.0
    return lambda step: 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))


def make_optimizer(net: PolicyNet, cfg: TrainConfig, lr: float) -> torch.optim.Optimizer:
    return torch.optim.AdamW([p for p in net.parameters() if p.requires_grad], lr=lr, weight_decay=cfg.weight_decay)


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    history: list[dict] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    eval_maoe: list[float] = field(default_factory=list)
    net: PolicyNet | None = None


def run_training(net: PolicyNet, data: TensorData, cfg: TrainConfig, out_dir, *, lr: float,
                 meta: dict, eval_samples: Sequence[NavigationSample] | None = None) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gen = torch.Generator().manual_seed(cfg.seed)
    n = len(data)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    opt = make_optimizer(net, cfg, lr)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, _lr_lambda(cfg, total_steps))
    w = cfg.weights
    meta = dict(meta, train_config=dataclasses.asdict(cfg), lr=lr)

    def checkpoint(epoch: int, step: int) -> Path:
        path = out / f"epoch-{epoch:03d}.pt"
        save_checkpoint(path, net, dict(meta, epochs_done=epoch, steps=step))
        return path

    result = TrainResult(checkpoint(0, 0), out / "train_log.txt", net=net)
    step = 0
    with open(result.log_path, "w") as logf:
        logf.write(LOG_HEADER + "\n")
        for epoch in range(1, cfg.epochs + 1):
            net.train()
            perm = torch.randperm(n, generator=gen)
            ep_total = 0.0
            for i in range(steps_per_epoch):
                idx = perm[i * cfg.batch_size : (i + 1) * cfg.batch_size]
                parts = compute_parts(net, data.batch(idx), cfg)
                loss = total_loss(parts, w, orientation=cfg.orientation_loss, hallucination=cfg.hallucination,
                                  batch_id=step)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                cur_lr = opt.param_groups[0]["lr"]
                opt.step()
                sched.step()
                vals = {k: v.item() for k, v in parts.items()}
                row = dict(step=step, epoch=epoch, **vals, total=loss.item(), lr=cur_lr)
                result.history.append(row)
                logf.write(" ".join(
                    [str(step), str(epoch)] + [repr(row[k]) for k in ("l1", "ori", "arr", "feat", "total", "lr")]
                ) + "\n")
                ep_total += row["total"] * len(idx)
                step += 1
            result.epoch_losses.append(ep_total / n)
            log.info("epoch %d/%d loss %.4f", epoch, cfg.epochs, ep_total / n)
            if eval_samples is not None and cfg.eval_every and epoch % cfg.eval_every == 0:
                result.eval_maoe.append(training_maoe(net, data, eval_samples))
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                result.checkpoint = checkpoint(epoch, step)
    net.eval()
    return result


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, samples: Sequence[NavigationSample], out_dir,
          provider: FeatureProvider | None = None, evaluate: bool = False) -> TrainResult:
    """Train from scratch. Writes ``epoch-000.pt`` (initial weights) and periodic checkpoints."""
    provider = provider or make_provider(model_cfg.backbone_id, model_cfg.token_dim, seed=model_cfg.provider_seed)
    data = TensorData(samples, provider)
    torch.manual_seed(train_cfg.seed)
    net = PolicyNet(model_cfg, provider.dim)
    meta = {"mode": "train", "seed": train_cfg.seed, "provenance": [{"mode": "train", "num_samples": len(samples)}]}
    return run_training(net, data, train_cfg, out_dir, lr=train_cfg.learning_rate, meta=meta,
                        eval_samples=samples if evaluate else None)


def finetune(base_checkpoint, train_cfg: TrainConfig, samples: Sequence[NavigationSample], out_dir,
             provider: FeatureProvider | None = None, model_cfg: ModelConfig | None = None,
             evaluate: bool = False) -> TrainResult:
    """Continue training a checkpoint at the fine-tuning learning rate."""
    net, base_meta = load_checkpoint(base_checkpoint)
    if model_cfg is not None and dataclasses.asdict(model_cfg) != dataclasses.asdict(net.cfg):
        raise CheckpointMismatch("model config differs from the base checkpoint")
    provider = provider or make_provider(net.cfg.backbone_id, net.cfg.token_dim, seed=net.cfg.provider_seed)
    if provider.dim != net.obs_proj.in_features:
        raise CheckpointMismatch("feature provider dimension differs from the base checkpoint")
    data = TensorData(samples, provider)
    provenance = list(base_meta.get("provenance", [])) + [
        {"mode": "finetune", "base": str(base_checkpoint), "num_samples": len(samples)}
    ]
    meta = {"mode": "finetune", "seed": train_cfg.seed, "provenance": provenance}
    return run_training(net, data, train_cfg, out_dir, lr=train_cfg.fine_tune_lr, meta=meta,
                        eval_samples=samples if evaluate else None)


@torch.no_grad()
def predict_tensors(net: PolicyNet, data: TensorData, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    net.eval()
    acts, probs = [], []
    for start in range(0, len(data), batch_size):
        b = data.batch(torch.arange(start, min(start + batch_size, len(data))))
        out = net(b.obs, b.past, b.target)
        acts.append(out.actions.double().numpy())
        probs.append(torch.sigmoid(out.arrival_logit).double().numpy())
    return np.concatenate(acts), np.concatenate(probs)


def predict(net: PolicyNet, provider: FeatureProvider, samples: Sequence[NavigationSample],
            batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """``(actions (n, h, 2), arrival probability (n,))`` for the samples."""
    return predict_tensors(net, TensorData(samples, provider), batch_size)


def training_maoe(net: PolicyNet, data: TensorData, samples: Sequence[NavigationSample]) -> float:
    was_training = net.training
    actions, _ = predict_tensors(net, data)
    net.train(was_training)
    gt = np.array([s.future_actions for s in samples])
    return metrics.maoe(actions, gt)


def clone_net(net: PolicyNet) -> PolicyNet:
    return copy.deepcopy(net)
