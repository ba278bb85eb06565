"""Relational refinement: coarse completion + partial input -> fine cloud.

The partial cloud and the coarse completion are fused into one anchor cloud.
A hierarchical encoder (residual selective kernels + edge-preserved pooling)
and mirrored decoder (unpooling with skip connections) compute per-anchor
features; feature expansion then emits several offset copies per anchor, and
farthest point sampling trims the offset-displaced anchors to the requested
resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import PointCloud, fps_batch
from .kernels import (EFEConfig, PSKConfig, affine_relu, efe_expand, ep_pool,
                      eu_unpool, init_affine, init_efe_params, init_rpsk_params,
                      neighbor_indices, rpsk_forward, tile_rows)
from .pmnet import decode_coarse, encode, reparameterize


@dataclass
class RENetConfig:
    channels: int = 24
    levels: int = 2
    pool_ratio: float = 0.25
    pool_k: int = 8
    branch_ks: tuple = (8, 16)
    up_ratio: int = 2
    output_n: int = 1024
    offset_scale: float = 0.1

    def level_psk(self, c_in=None):
        return PSKConfig(c=self.channels, c_in=c_in or self.channels,
                         branch_ks=self.branch_ks)


def init_renet_params(registry, rng, cfg, prefix="renet"):
    init_affine(registry, rng, f"{prefix}.embed", 3, cfg.channels)
    for lv in range(cfg.levels):
        init_rpsk_params(registry, rng, f"{prefix}.enc{lv}", cfg.level_psk())
    init_rpsk_params(registry, rng, f"{prefix}.mid", cfg.level_psk())
    for lv in range(cfg.levels):
        # decoder blocks consume interpolated + skip features
        init_rpsk_params(registry, rng, f"{prefix}.dec{lv}",
                         cfg.level_psk(c_in=2 * cfg.channels))
    init_efe_params(registry, rng, f"{prefix}.efe",
                    EFEConfig(up_ratio=cfg.up_ratio, c_in=cfg.channels,
                              c_out=cfg.channels))


def _merge_anchor_clouds(x, yc, batch):
    """Interleave per-sample blocks of X and Yc into one anchor tensor."""
    nx = x.data.shape[0] // batch
    nc = yc.data.shape[0] // batch
    stacked = ad.concat([x, yc], axis=0)
    perm = np.empty(batch * (nx + nc), dtype=np.int64)
    na = nx + nc
    for b in range(batch):
        perm[b * na:b * na + nx] = np.arange(b * nx, (b + 1) * nx)
        perm[b * na + nx:(b + 1) * na] = batch * nx + np.arange(b * nc, (b + 1) * nc)
    return ad.gather(stacked, perm)


def renet_forward(x_cloud, yc, registry, cfg, batch=1, output_n=None, prefix="renet"):
    """Fine completion coordinates from partial + coarse anchors.

    x_cloud, yc: (B*Nx, 3) / (B*Nc, 3) coordinate tensors (or clouds/arrays).
    Returns a (B*output_n, 3) Tensor.
    """
    output_n = output_n or cfg.output_n
    x = x_cloud if isinstance(x_cloud, ad.Tensor) else ad.const(
        x_cloud.points if isinstance(x_cloud, PointCloud) else x_cloud)
    yc_t = yc if isinstance(yc, ad.Tensor) else ad.const(
        yc.points if isinstance(yc, PointCloud) else yc)

    anchors = _merge_anchor_clouds(x, yc_t, batch)
    n_total = anchors.data.shape[0]
    n = n_total // batch
    expanded_per_sample = n * cfg.up_ratio
    if output_n > expanded_per_sample:
        raise ValueError(
            f"renet_forward: output_n={output_n} exceeds expanded count "
            f"{expanded_per_sample} (anchors {n} x up_ratio {cfg.up_ratio})")

    feats = affine_relu(registry, f"{prefix}.embed", anchors)
    coords = anchors
    skips = []
    for lv in range(cfg.levels):
        nbr = neighbor_indices(coords.data, cfg.branch_ks, batch)
        feats = rpsk_forward(feats, coords, cfg.level_psk(), registry,
                             f"{prefix}.enc{lv}", batch=batch, neighbor_idx=nbr)
        skips.append((feats, coords, nbr))
        feats, coords, _ = ep_pool(feats, coords, cfg.pool_ratio, cfg.pool_k,
                                   batch=batch)
    feats = rpsk_forward(feats, coords, cfg.level_psk(), registry,
                         f"{prefix}.mid", batch=batch)
    for lv in reversed(range(cfg.levels)):
        skip_feats, fine_coords, nbr = skips[lv]
        feats = eu_unpool(feats, coords, fine_coords, skip_feats, batch=batch)
        coords = fine_coords
        feats = rpsk_forward(feats, coords, cfg.level_psk(c_in=2 * cfg.channels),
                             registry, f"{prefix}.dec{lv}", batch=batch,
                             neighbor_idx=nbr)

    efe_cfg = EFEConfig(up_ratio=cfg.up_ratio, c_in=cfg.channels, c_out=cfg.channels)
    _, offsets = efe_expand(feats, coords, efe_cfg, registry, f"{prefix}.efe")
    fine_all = ad.add(tile_rows(anchors, cfg.up_ratio),
                      ad.scale(offsets, cfg.offset_scale))

    pts = fine_all.data.reshape(batch, expanded_per_sample, 3)
    kept = fps_batch(pts, output_n, seed_index=0)
    kept_flat = (kept + np.arange(batch)[:, None] * expanded_per_sample).reshape(-1)
    return ad.gather(fine_all, kept_flat)


def vrcnet_complete(x_cloud, registry, pm_cfg, re_cfg, output_n=None, batch=1):
    """Deterministic inference: completion path (latent mean) then refinement.

    Returns (coarse PointCloud, fine PointCloud) for batch=1, or coordinate
    arrays stacked per sample otherwise.
    """
    x = x_cloud if isinstance(x_cloud, ad.Tensor) else ad.const(
        x_cloud.points if isinstance(x_cloud, PointCloud) else x_cloud)
    g, p = encode(x, "completion", registry, pm_cfg, batch=batch)
    z = reparameterize(p, rng=None)
    yc = decode_coarse(z, g, registry, pm_cfg)
    yf = renet_forward(x, yc, registry, re_cfg, batch=batch, output_n=output_n)
    if batch == 1:
        category = x_cloud.category if isinstance(x_cloud, PointCloud) else None
        return (PointCloud(yc.data.copy(), category=category),
                PointCloud(yf.data.copy(), category=category))
    return yc.data.copy(), yf.data.copy()
