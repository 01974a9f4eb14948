"""End-to-end training of the CR/RS pair against the frozen proxy codec.

One fresh (CR, RS) pair is trained per quality point with the plain
rate-distortion objective bpp + lambda * MSE. The codec never receives
updates; its state checksum is asserted unchanged around every run.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codecs import CodecProfile, ProxyCodec, profile_table
from .datagen import Dataset, batches
from .eval import RdPoint, rd_point_for_config
from .pipeline import SandwichConfig, e2e_train_pass
from .lintrans import TransformSpec
from .tensor_nn import AdamState, adam_step
from .tensor_nn.net import FilterNet, make_filter_net, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the offending step is in the message."""


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 4
    crop: int = 64
    transform: TransformSpec = field(default_factory=lambda: TransformSpec(kind="desaturate", alpha=0.8))
    use_cr: bool = True
    use_rs: bool = True
    depth: int = 2
    width: int = 8
    qualities: tuple = (2, 3, 4, 5)
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    deterministic: bool = True  # reductions are always ordered in this backend
    out_dir: str | None = None

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.crop, self.depth, self.width) < 1:
            raise ValueError("all sizes must be positive")
        if any(not (1 <= q <= 8) for q in self.qualities):
            raise ValueError("quality points must be within 1..8")

    def sandwich(self) -> SandwichConfig:
        return SandwichConfig(transform=self.transform, use_cr=self.use_cr, use_rs=self.use_rs)


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)  # (step, loss, bpp, mse)
    epochs: list = field(default_factory=list)  # (epoch, val_psnr, val_bpp)
    wall_seconds: float = 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "bpp", "mse"])
            for row in self.steps:
                w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])


def checkpoint_name(quality: int, depth: int, width: int, epoch: int) -> str:
    return f"{quality}_{depth}x{width}_{epoch}.snn"


def train_quality_point(cfg: TrainConfig, data: Dataset, profile: CodecProfile,
                        codec: ProxyCodec, val_data: Dataset | None = None
                        ) -> tuple[FilterNet, FilterNet, TrainLog]:
    """Train one fresh CR/RS pair for a single quality point."""
    rng = np.random.default_rng(cfg.seed + 1000 * profile.quality)
    cr = make_filter_net(cfg.depth, cfg.width, rng) if cfg.use_cr else None
    rs = make_filter_net(cfg.depth, cfg.width, rng) if cfg.use_rs else None
    params = (cr.parameters() if cr else []) + (rs.parameters() if rs else [])
    state = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    sandwich = cfg.sandwich()
    started = time.monotonic()
    tlog = TrainLog()

    frozen = codec.state_checksum()
    step = 0
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    for epoch in range(cfg.epochs):
        for batch in batches(data, cfg.batch_size):
            _, bits, loss = e2e_train_pass(
                batch, sandwich, cr, rs, profile, noise_seed=cfg.seed + step, codec=codec
            )
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss at step {step} (quality {profile.quality})"
                )
            bsz = batch.shape[0]
            bpp = bits / (bsz * batch.shape[2] * batch.shape[3])
            mse_val = (loss_val - bpp) / profile.lam
            tlog.steps.append((step, loss_val, bpp, mse_val))
            if params:
                for p in params:
                    p.zero_grad()
                loss.backward()
                grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
                adam_step(params, grads, state)
            step += 1
        if val_data is not None:
            point = evaluate_checkpoint((cr, rs), val_data, sandwich, profile, codec)
            tlog.epochs.append((epoch, point.psnr_db, point.bpp))
        if out_dir is not None:
            save_checkpoint(
                out_dir / checkpoint_name(profile.quality, cfg.depth, cfg.width, epoch),
                [n for n in (cr, rs) if n is not None],
            )
    if codec.state_checksum() != frozen:
        raise RuntimeError("frozen-codec contract violated: codec state changed")
    tlog.wall_seconds = time.monotonic() - started
    return cr, rs, tlog


def train(cfg: TrainConfig, data: Dataset, codec: ProxyCodec | None = None,
          val_data: Dataset | None = None) -> dict:
    """Train per quality point; returns {quality: (cr, rs, TrainLog)}."""
    if len(data) == 0:
        raise ValueError("training dataset is empty")
    codec = codec or ProxyCodec()
    out = {}
    for profile in profile_table(cfg.qualities):
        log.info("training quality %d (lambda %.4g)", profile.quality, profile.lam)
        out[profile.quality] = train_quality_point(cfg, data, profile, codec, val_data)
    return out


def evaluate_checkpoint(nets, data: Dataset, sandwich: SandwichConfig,
                        profile: CodecProfile, codec: ProxyCodec) -> RdPoint:
    """Mean bpp (side-info bits included) and mean PSNR over a dataset.

    The header travels through its wire format, so evaluation sees exactly
    what a decoder would parse.
    """
    cr, rs = nets
    if sandwich.use_cr != (cr is not None) or sandwich.use_rs != (rs is not None):
        raise ValueError("net presence must match the sandwich config")
    return rd_point_for_config(data, sandwich, profile, codec, cr, rs)
