"""Self-supervised pretraining: reconstruct full clothing images from
randomly occluded inputs, exporting the trunk parameters for transfer to the
warp refinement network."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import Checkpoint, load_params_into, state_dict_to_params
from .errors import DivergenceError
from .losses import l1_loss
from .mask_ops import OcclusionMaskParams, apply_mask, random_cloth_mask
from .nets import ResidualUNet, ResidualUNetSpec, init_module

STAGE = "fabricator"


@dataclass
class FabricatorConfig:
    iterations: int
    batch_size: int = 4
    learning_rate: float = 2e-4
    seed: int = 0
    mask_params: OcclusionMaskParams = field(default_factory=OcclusionMaskParams)
    base_width: int = 64
    depth: int = 4
    mask_region: str = "garment_bbox"  # "garment_bbox" | "full"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def build_net(base_width=64, depth=4):
    """The 4-in (masked cloth + keep mask), 3-out reconstruction network."""
    return ResidualUNet(ResidualUNetSpec(4, 3, base_width, depth))


def _cloth_region(cloth):
    """Foreground of a product image shot on a white background."""
    metric = (cloth + 1.0) / 2.0
    fg = (metric < 0.97).any(axis=0).astype(np.float32)
    return fg if fg.sum() > 0 else None


def train_fabricator(samples, config: FabricatorConfig, log_path=None, config_hash=""):
    """Train the reconstruction net with per-iteration fresh occlusion masks.

    Deterministic in (seed, samples, config); aborts with the last good
    checkpoint if the loss goes non-finite.
    """
    samples = [s.load() if hasattr(s, "load") else s for s in samples]
    if not samples:
        raise ValueError("samples must be nonempty")
    torch.manual_seed(config.seed)
    net = init_module(build_net(config.base_width, config.depth), config.seed)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate, betas=(0.5, 0.999))

    cloths = [np.asarray(s.cloth, dtype=np.float32) for s in samples]
    regions = [
        _cloth_region(c) if config.mask_region == "garment_bbox" else None for c in cloths
    ]
    h, w = cloths[0].shape[-2:]

    meta = {
        "base_width": config.base_width,
        "depth": config.depth,
        "in_channels": 4,
        "out_channels": 3,
    }
    log_f = open(log_path, "w", encoding="utf-8") if log_path else None
    last_good = state_dict_to_params(net)
    try:
        for it in range(config.iterations):
            batch_in, batch_tgt = [], []
            for j in range(config.batch_size):
                idx = (it * config.batch_size + j) % len(samples)
                mask_seed = config.seed * 1_000_003 + it * config.batch_size + j
                keep = random_cloth_mask(mask_seed, h, w, config.mask_params, regions[idx])
                partial, keep = apply_mask(cloths[idx], keep)
                batch_in.append(np.concatenate([partial, keep[None]], axis=0))
                batch_tgt.append(cloths[idx])
            x = torch.from_numpy(np.stack(batch_in))
            tgt = torch.from_numpy(np.stack(batch_tgt))
            out = torch.tanh(net(x))
            loss = l1_loss(out, tgt)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"divergence at iteration {it}",
                    checkpoint=Checkpoint(STAGE, config_hash, last_good, meta),
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            if it % 25 == 0 or it == config.iterations - 1:
                last_good = state_dict_to_params(net)
            if log_f:
                log_f.write(json.dumps({"iteration": it, "loss": float(loss.detach())}) + "\n")
    finally:
        if log_f:
            log_f.close()
    return Checkpoint(stage=STAGE, config_hash=config_hash, params=last_good, meta=meta)


def fabricate(ckpt: Checkpoint, partial, keep_mask):
    """Reconstruct a full cloth image from a masked one."""
    ckpt.require_stage(STAGE)
    net = build_net(ckpt.meta["base_width"], ckpt.meta["depth"])
    load_params_into(net, ckpt.params)
    net.eval()
    partial = torch.as_tensor(np.asarray(partial, dtype=np.float32))
    keep = torch.as_tensor(np.asarray(keep_mask, dtype=np.float32))
    x = torch.cat([partial, keep.unsqueeze(0)], dim=0).unsqueeze(0)
    with torch.no_grad():
        out = torch.tanh(net(x))
    return out.squeeze(0).numpy()
