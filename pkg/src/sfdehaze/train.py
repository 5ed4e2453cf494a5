"""Supervised source training and source-free adaptation loops."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import functional as F
from .checkpoint import Checkpoint, tensors_checksum
from .haze_sim import PairedDataset, UnlabeledImages
from .image_ops import ClaheConfig, ConfigError, clahe, from_chw, psnr, ssim, to_chw
from .losses import LossWeights, amplitude_loss, cap_loss, dcp_loss, phase_loss, total_loss
from .models import SourceNet, assemble_student, source_checkpoint, source_from_checkpoint, student_checkpoint
from .optim import Adam, cosine_lr
from .tensor import FrozenParameterError, Tensor, backward, current_graph, no_grad

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch: int = 6
    patch: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be >= 1")
        if self.patch < 4 or self.patch % 4:
            raise ConfigError(f"patch must be a positive multiple of 4, got {self.patch}")


# ---------------------------------------------------------------------------
# batching and evaluation helpers

def _crop_batch(images: Sequence[np.ndarray], idx, patch: int, rng: np.random.Generator,
                others: Sequence[Sequence[np.ndarray]] = ()):
    """Random aligned crops (plus horizontal flips) as N x 3 x p x p arrays."""
    out = [[] for _ in range(1 + len(others))]
    for i in idx:
        H, W = images[i].shape[:2]
        if H < patch or W < patch:
            raise ConfigError(f"image {i} ({H}x{W}) is smaller than the {patch} training patch")
        y = int(rng.integers(0, H - patch + 1))
        x = int(rng.integers(0, W - patch + 1))
        flip = bool(rng.integers(2))
        for k, src in enumerate((images, *others)):
            crop = src[i][y:y + patch, x:x + patch]
            if flip:
                crop = crop[:, ::-1]
            out[k].append(to_chw(crop))
    return [np.stack(o).astype(np.float32) for o in out]


def pad_to_multiple(img: np.ndarray, m: int = 4):
    H, W = img.shape[:2]
    ph, pw = (-H) % m, (-W) % m
    if ph == 0 and pw == 0:
        return img, (H, W)
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect"), (H, W)


def run_net(net, images: Sequence[np.ndarray], chunk: int = 16) -> list[np.ndarray]:
    """Dehaze full images (any size), clamped to [0, 1]."""
    results = []
    with no_grad():
        for start in range(0, len(images), chunk):
            group = images[start:start + chunk]
            shapes = {im.shape for im in group}
            if len(shapes) == 1:
                padded = [pad_to_multiple(im) for im in group]
                x = np.stack([to_chw(p) for p, _ in padded]).astype(np.float32)
                out = net(Tensor(x))[0].data
                for k, (_, (H, W)) in enumerate(padded):
                    results.append(np.clip(from_chw(out[k]), 0, 1)[:H, :W])
            else:
                for im in group:
                    results.extend(run_net(net, [im], chunk=1))
    return results


def evaluate(net, hazy: Sequence[np.ndarray], clean: Sequence[np.ndarray]) -> dict:
    outs = run_net(net, hazy)
    return {"psnr": float(np.mean([psnr(o, c) for o, c in zip(outs, clean)])),
            "ssim": float(np.mean([ssim(o, c) for o, c in zip(outs, clean)]))}


# ---------------------------------------------------------------------------
# source training

def train_source(data: PairedDataset, cfg: OptimConfig, net_seed: int = 0,
                 on_epoch: Optional[Callable[[int, float], None]] = None):
    """Supervised L1 training of a fresh :class:`SourceNet`; returns ``(checkpoint, epoch_losses)``."""
    rng = np.random.default_rng(cfg.seed)
    net = SourceNet(seed=net_seed)
    opt = Adam(net.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    n = len(data)
    steps_per_epoch = math.ceil(n / cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch:(b + 1) * cfg.batch]
            hazy, clean = _crop_batch(data.hazy, idx, cfg.patch, rng, others=(data.clean,))
            current_graph().clear()
            out, _ = net(Tensor(hazy))
            loss = F.l1(out, Tensor(clean))
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"source training diverged (loss {value}) at step {step}")
            opt.zero_grad()
            backward(loss)
            opt.step(cosine_lr(step, total_steps, cfg.lr))
            losses.append(value)
            step += 1
        history.append(float(np.mean(losses)))
        log.info("source epoch %d: L1 %.5f", epoch, history[-1])
        if on_epoch:
            on_epoch(epoch, history[-1])
    ckpt = source_checkpoint(net, seed=cfg.seed, net_seed=net_seed, step=step, lr=cfg.lr,
                             epochs=cfg.epochs, batch=cfg.batch, patch=cfg.patch)
    return ckpt, history


# ---------------------------------------------------------------------------
# source-free adaptation

@dataclass
class AdaptReport:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    checksums: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def frozen_checksum_constant(self) -> bool:
        return len(set(self.checksums)) <= 1

    def write_csv(self, path):
        cols = ["step", "lr", "phase", "amplitude", "dcp", "cap", "total"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for row in self.steps:
                w.writerow(row)

    def summary(self, **extra) -> dict:
        out = {
            "steps": len(self.steps),
            "final_losses": self.steps[-1] if self.steps else {},
            "epochs": self.epochs,
            "frozen_checksum": self.checksums[0] if self.checksums else None,
            "frozen_checksum_constant": self.frozen_checksum_constant,
            "config": self.config,
        }
        out.update(extra)
        return out

    def write_json(self, path, **extra):
        with open(path, "w") as fh:
            json.dump(self.summary(**extra), fh, indent=2, sort_keys=True)


def adapt_sfuda(source_ckpt: Checkpoint, target: UnlabeledImages, cfg: OptimConfig,
                weights: LossWeights = LossWeights(), *, clahe_cfg: ClaheConfig = ClaheConfig(),
                insertion_points=("enc1", "enc2", "body"), dcp_patch: int = 15,
                angular_phase: bool = False, use_drn: bool = True,
                eval_pairs: Optional[PairedDataset] = None):
    """Adapt a frozen source network to unlabeled target images through DRN modules.

    ``target`` only exposes hazy images. ``eval_pairs`` (if given) is used solely
    for per-epoch reporting after each epoch's updates. With ``use_drn=False``
    the source weights themselves are fine-tuned (ablation only; this breaks the
    frozen-source contract on purpose).
    Returns ``(student_checkpoint, report)``.
    """
    if not isinstance(target, UnlabeledImages):
        raise TypeError("adapt_sfuda takes UnlabeledImages (hazy only)")
    rng = np.random.default_rng(cfg.seed)
    teacher = source_from_checkpoint(source_ckpt).freeze()
    student = assemble_student(source_ckpt, insertion_points if use_drn else ())
    if use_drn:
        params = student.drn_parameters()
    else:
        for p in student.source.parameters():
            p.frozen = False
            p.requires_grad = True
        params = student.source.parameters()
    frozen = [p for p in student.parameters() if p.frozen]
    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    report = AdaptReport(config={"optim": asdict(cfg), "weights": asdict(weights),
                                 "clahe": asdict(clahe_cfg), "insertion_points": list(insertion_points),
                                 "dcp_patch": dcp_patch, "angular_phase": angular_phase,
                                 "use_drn": use_drn})

    def frozen_checksum():
        return tensors_checksum({p.name: p.data for p in student.source.parameters()})

    report.checksums.append(frozen_checksum())
    n = len(target)
    steps_per_epoch = math.ceil(n / cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch:(b + 1) * cfg.batch]
            (hazy,) = _crop_batch(target, idx, cfg.patch, rng)
            ref = np.stack([to_chw(clahe(from_chw(h), clahe_cfg)) for h in hazy])
            current_graph().clear()
            with no_grad():
                t_out, t_taps = teacher(Tensor(hazy))
            s_out, s_taps = student(Tensor(hazy))
            clamped = F.clamp(s_out, 0.0, 1.0)
            parts = {
                "phase": phase_loss(s_out, t_out, s_taps, t_taps, angular=angular_phase),
                "amplitude": amplitude_loss(s_out, Tensor(ref)),
                "dcp": dcp_loss(clamped, dcp_patch),
                "cap": cap_loss(clamped),
            }
            total, breakdown = total_loss(parts, weights)
            if not math.isfinite(breakdown["total"]):
                raise TrainingError(f"adaptation diverged (loss {breakdown['total']}) at step {step}")
            lr = cosine_lr(step, total_steps, cfg.lr)
            opt.zero_grad()
            if total.requires_grad:
                backward(total)
                for p in frozen:
                    if p.grad is not None:
                        raise FrozenParameterError(f"gradient reached frozen parameter {p.name}")
                opt.step(lr)
            current_graph().clear()
            report.steps.append({"step": step, "lr": lr, **breakdown})
            step += 1
        if use_drn:
            report.checksums.append(frozen_checksum())
        if eval_pairs is not None:
            metrics = evaluate(student, eval_pairs.hazy, eval_pairs.clean)
            report.epochs.append({"epoch": epoch, **metrics})
            log.info("adapt epoch %d: PSNR %.3f SSIM %.4f", epoch, metrics["psnr"], metrics["ssim"])
    ckpt = student_checkpoint(student, seed=cfg.seed, step=step, source_checksum=source_ckpt.checksum(),
                              use_drn=use_drn)
    return ckpt, report
