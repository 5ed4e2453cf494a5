"""The seeded desk-scale experiment: source training, adaptation and loss ablations."""

from __future__ import annotations

import logging
from dataclasses import replace

from .checkpoint import Checkpoint
from .config import RunConfig
from .haze_sim import DomainConfig, PairedDataset, UnlabeledImages, generate
from .models import net_from_checkpoint
from .train import adapt_sfuda, evaluate, train_source

log = logging.getLogger(__name__)

# single-loss removals, keyed by the weight they zero
ABLATIONS = {
    "no_phase": "lambda_p",
    "no_amplitude": "lambda_a",
    "no_dcp": "lambda_d",
    "no_cap": "lambda_c",
}


def paired(domain: DomainConfig, n: int, start: int = 0) -> PairedDataset:
    samples = generate(domain, n, start)
    return PairedDataset([s.hazy for s in samples], [s.clean for s in samples],
                         [f"{start + i:05d}.png" for i in range(n)])


def source_train_set(cfg: RunConfig) -> PairedDataset:
    return paired(cfg.source_domain, cfg.data.n_source)


def target_train_set(cfg: RunConfig) -> UnlabeledImages:
    return UnlabeledImages.from_samples(generate(cfg.target_domain, cfg.data.n_target))


def heldout(cfg: RunConfig, domain: str = "target") -> PairedDataset:
    dom = cfg.target_domain if domain == "target" else cfg.source_domain
    return paired(dom, cfg.data.n_heldout, cfg.data.heldout_start)


def train_desk_source(cfg: RunConfig):
    return train_source(source_train_set(cfg), cfg.source_optim, net_seed=cfg.adapt.net_seed)


def adapt_desk(source_ckpt: Checkpoint, cfg: RunConfig, weights=None, *, target=None,
               eval_pairs=None, use_drn=None):
    a = cfg.adapt
    return adapt_sfuda(
        source_ckpt, target if target is not None else target_train_set(cfg), cfg.adapt_optim,
        weights if weights is not None else cfg.loss,
        clahe_cfg=cfg.clahe, insertion_points=a.insertion_points, dcp_patch=a.dcp_patch,
        angular_phase=a.angular_phase, use_drn=a.use_drn if use_drn is None else use_drn,
        eval_pairs=eval_pairs)


def score(ckpt: Checkpoint, pairs: PairedDataset) -> dict:
    return evaluate(net_from_checkpoint(ckpt), pairs.hazy, pairs.clean)


def run_ablation(source_ckpt: Checkpoint, cfg: RunConfig, include_full: bool = True) -> dict:
    """Held-out target metrics for the frozen source, the full loss and each single-loss removal."""
    target = target_train_set(cfg)
    pairs = heldout(cfg)
    results = {"source": score(source_ckpt, pairs)}
    runs = {"full": cfg.loss} if include_full else {}
    for name, key in ABLATIONS.items():
        runs[name] = replace(cfg.loss, **{key: 0.0})
    for name, weights in runs.items():
        ckpt, _ = adapt_desk(source_ckpt, cfg, weights, target=target)
        results[name] = score(ckpt, pairs)
        log.info("ablation %s: PSNR %.3f SSIM %.4f", name, results[name]["psnr"], results[name]["ssim"])
    return results
