"""Joint loss assembly, training loop, and evaluation harness."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .geometry import PointCloud
from .io import save_checkpoint
from .metrics import (MetricReport, chamfer_distance, chamfer_distance_tensor,
                      fscore)
from .optim import ParamRegistry, adam_step, lr_schedule
from .pmnet import PMNetConfig, init_pmnet_params, pmnet_losses
from .renet import RENetConfig, init_renet_params, renet_forward, vrcnet_complete
from .util import rng_for


@dataclass
class LossWeights:
    lambda_rec: float = 1.0
    lambda_com: float = 1.0
    lambda_fine: float = 1.0
    kl_lambda: float = 0.1

    def __post_init__(self):
        if min(self.lambda_rec, self.lambda_com, self.lambda_fine, self.kl_lambda) < 0:
            raise ValueError("LossWeights: weights must be nonnegative")


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 100
    base_lr: float = 1e-4
    decay: float = 0.7
    decay_interval: int = 40          # epochs per decay step
    rng_seed: int = 0
    target_resolution: int = 0        # 0: use the largest resolution <= output_n
    checkpoint_every: int = 50        # epochs
    max_steps: int = 0                # 0: no cap
    early_stop_cd: float = 0.0        # 0: disabled; else stop when the trailing
    early_stop_window: int = 20       # mean of cd_fine over this many steps drops below

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.base_lr <= 0:
            raise ValueError("TrainConfig: batch_size, epochs, base_lr must be positive")


def joint_loss(parts, w):
    """Weighted sum of the five loss terms.

    L = lambda_rec * (kl_lambda * kl_rec + cd_rec)
      + lambda_com * (kl_lambda * kl_com + cd_com)
      + lambda_fine * cd_fine
    """
    rec = ad.add(ad.scale(parts["kl_rec"], w.kl_lambda), parts["cd_rec"])
    com = ad.add(ad.scale(parts["kl_com"], w.kl_lambda), parts["cd_com"])
    return ad.add(ad.add(ad.scale(rec, w.lambda_rec), ad.scale(com, w.lambda_com)),
                  ad.scale(parts["cd_fine"], w.lambda_fine))


def build_model(pm_cfg, re_cfg, init_seed):
    """Fresh parameter registry for the full completion model."""
    registry = ParamRegistry()
    rng = rng_for(init_seed, "init")
    init_pmnet_params(registry, rng, pm_cfg)
    init_renet_params(registry, rng, re_cfg)
    return registry


def _stack(clouds):
    return np.concatenate([c.points for c in clouds], axis=0)


def train_step(registry, pm_cfg, re_cfg, x_batch, y_batch, weights, lr, rng):
    """One optimization step over a stacked batch; returns the loss parts."""
    batch = len(x_batch)
    x = _stack(x_batch)
    y = _stack(y_batch)
    with ad.Tape() as tape:
        parts = pmnet_losses(x, y, registry, pm_cfg, rng, batch=batch)
        yf = renet_forward(ad.const(x), parts["yc"], registry, re_cfg, batch=batch)
        parts["cd_fine"] = chamfer_distance_tensor(yf, ad.const(y), batch=batch)
        total = joint_loss(parts, weights)
        if not np.isfinite(total.data):
            tape.release()
            raise FloatingPointError("train_step: non-finite loss")
        grads = ad.backward(total)
        grad_map = grads.by_path(registry)
    tape.release()
    adam_step(registry, grad_map, lr)
    return {k: float(parts[k].data) for k in
            ("kl_rec", "cd_rec", "kl_com", "cd_com", "cd_fine")} | {
                "total": float(total.data)}


def fit(registry, pm_cfg, re_cfg, pairs, cfg, weights, log_path=None,
        checkpoint_prefix=None):
    """Train on DatasetPairs; returns the per-step loss log.

    Mini-batches are seeded shuffles of the pair list; the learning rate
    decays per epoch.  Aborts with the failing step id on non-finite loss.
    Deterministic for a fixed cfg.rng_seed.
    """
    if not pairs:
        raise ValueError("fit: empty dataset")
    res = cfg.target_resolution or max(pairs[0].gts)
    if res not in pairs[0].gts:
        raise ValueError(f"fit: no ground truth at resolution {res}")
    shuffle_rng = rng_for(cfg.rng_seed, "shuffle")
    noise_rng = rng_for(cfg.rng_seed, "latent-noise")
    log = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    step = 0
    stop = False
    meta = {"pm": asdict(pm_cfg), "re": asdict(re_cfg)}
    try:
        for epoch in range(cfg.epochs):
            lr = lr_schedule(epoch, cfg.base_lr, cfg.decay, cfg.decay_interval)
            order = shuffle_rng.permutation(len(pairs))
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                x_batch = [pairs[i].partial for i in idx]
                y_batch = [pairs[i].gts[res] for i in idx]
                try:
                    losses = train_step(registry, pm_cfg, re_cfg, x_batch, y_batch,
                                        weights, lr, noise_rng)
                except FloatingPointError as err:
                    raise FloatingPointError(f"{err} at step {step}") from err
                record = {"step": step, "epoch": epoch, "lr": lr} | losses
                log.append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                step += 1
                if cfg.max_steps and step >= cfg.max_steps:
                    stop = True
                if cfg.early_stop_cd and len(log) >= cfg.early_stop_window:
                    tail = [r["cd_fine"] for r in log[-cfg.early_stop_window:]]
                    if float(np.mean(tail)) < cfg.early_stop_cd:
                        stop = True
                if stop:
                    break
            if checkpoint_prefix and ((epoch + 1) % cfg.checkpoint_every == 0 or stop
                                      or epoch == cfg.epochs - 1):
                save_checkpoint(registry, checkpoint_prefix, meta=meta)
            if stop:
                break
        if checkpoint_prefix:
            save_checkpoint(registry, checkpoint_prefix, meta=meta)
    finally:
        if log_file:
            log_file.close()
    return log


def evaluate(registry, pm_cfg, re_cfg, pairs, resolutions, tau=0.01):
    """Per-category Chamfer/F-score tables at each requested resolution.

    Inference is deterministic (latent mean).  Raises if a resolution exceeds
    what the checkpoint's expansion ratio supports.
    """
    if not pairs:
        raise ValueError("evaluate: empty dataset")
    reports = {}
    for res in resolutions:
        n_anchor = len(pairs[0].partial) + pm_cfg.n_coarse
        if res > n_anchor * re_cfg.up_ratio:
            raise ValueError(
                f"evaluate: resolution {res} unsupported by checkpoint config "
                f"(max {n_anchor * re_cfg.up_ratio})")
        samples = []
        for pair in pairs:
            if res not in pair.gts:
                raise ValueError(f"evaluate: pair {pair.pair_id} lacks GT at {res}")
            _, fine = vrcnet_complete(pair.partial, registry, pm_cfg, re_cfg,
                                      output_n=res)
            gt = pair.gts[res]
            cd_raw = chamfer_distance(fine, gt)
            prec, rec, f1 = fscore(fine, gt, tau)
            samples.append((pair.category, cd_raw, prec, rec, f1))
        reports[res] = MetricReport.from_samples(samples, tau)
    return reports
