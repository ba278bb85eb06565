"""Dual-path probabilistic coarse completion.

One shared point encoder trunk (two-stage shared MLP with channelwise max
pooling) feeds two path-specific heads: the reconstruction path infers a
latent distribution from complete clouds, the completion path from partials.
Both paths share one coarse decoder.  During training the completion-path
distribution is pulled toward the (gradient-blocked) reconstruction-path
distribution; at inference only the completion path runs, with the latent
mean instead of a sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import PointCloud
from .kernels import affine, affine_relu, init_affine
from .metrics import LatentDistribution, chamfer_distance_tensor, gaussian_kl

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class PMNetConfig:
    latent_dim: int = 32
    feat_dim: int = 256
    n_coarse: int = 256
    trunk1: tuple = (64, 128)
    head_hidden: int = 64
    dec_hidden: tuple = (256, 256)


def init_pmnet_params(registry, rng, cfg, prefix="pmnet"):
    c1, c2 = cfg.trunk1
    init_affine(registry, rng, f"{prefix}.trunk1.l0", 3, c1)
    init_affine(registry, rng, f"{prefix}.trunk1.l1", c1, c2)
    init_affine(registry, rng, f"{prefix}.trunk2.l0", 2 * c2, cfg.feat_dim)
    init_affine(registry, rng, f"{prefix}.trunk2.l1", cfg.feat_dim, cfg.feat_dim)
    for head in ("head_rec", "head_com"):
        init_affine(registry, rng, f"{prefix}.{head}.l0", cfg.feat_dim, cfg.head_hidden)
        init_affine(registry, rng, f"{prefix}.{head}.l1", cfg.head_hidden,
                    2 * cfg.latent_dim)
    d0, d1 = cfg.dec_hidden
    init_affine(registry, rng, f"{prefix}.dec.l0", cfg.latent_dim + cfg.feat_dim, d0)
    init_affine(registry, rng, f"{prefix}.dec.l1", d0, d1)
    init_affine(registry, rng, f"{prefix}.dec.l2", d1, cfg.n_coarse * 3)


def clamp(x, lo, hi):
    """Elementwise clamp built from relu: lo + relu(x-lo) - relu(x-hi)."""
    lo_t = ad.const(np.full(x.data.shape, lo))
    hi_t = ad.const(np.full(x.data.shape, hi))
    return ad.sub(ad.add(lo_t, ad.relu(ad.sub(x, lo_t))), ad.relu(ad.sub(x, hi_t)))


def _as_coord_tensor(cloud):
    if isinstance(cloud, ad.Tensor):
        return cloud
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    return ad.const(pts)


def encode(cloud, path, registry, cfg, batch=1, prefix="pmnet"):
    """Point encoder: returns (global_feat (B, F), LatentDistribution).

    `path` selects the distribution head: "reconstruction" for complete
    inputs, "completion" for partials.  The trunk and decoder weights are
    shared between paths.  Exactly permutation-invariant (max pooling).
    """
    if path not in ("reconstruction", "completion"):
        raise ValueError(f"encode: unknown path '{path}'")
    x = _as_coord_tensor(cloud)
    n_total = x.data.shape[0]
    if n_total == 0:
        raise ValueError("encode: empty cloud")
    n = n_total // batch
    c2 = cfg.trunk1[1]

    f = affine_relu(registry, f"{prefix}.trunk1.l0", x)
    f = affine_relu(registry, f"{prefix}.trunk1.l1", f)               # (BN, c2)
    g1 = ad.max_reduce(ad.reshape(f, (batch, n, c2)), axis=1)         # (B, c2)
    g1_tiled = ad.reshape(ad.tile(ad.reshape(g1, (batch, 1, c2)), (1, n, 1)),
                          (n_total, c2))
    f2 = ad.concat([f, g1_tiled], axis=1)                             # (BN, 2c2)
    f2 = affine_relu(registry, f"{prefix}.trunk2.l0", f2)
    f2 = affine(registry, f"{prefix}.trunk2.l1", f2)                  # (BN, F)
    g = ad.max_reduce(ad.reshape(f2, (batch, n, cfg.feat_dim)), axis=1)   # (B, F)

    head = "head_rec" if path == "reconstruction" else "head_com"
    h = affine_relu(registry, f"{prefix}.{head}.l0", g)
    stats = affine(registry, f"{prefix}.{head}.l1", h)                # (B, 2D)
    mu = ad.slice_(stats, (slice(None), slice(0, cfg.latent_dim)))
    logvar = ad.slice_(stats, (slice(None), slice(cfg.latent_dim, 2 * cfg.latent_dim)))
    logvar = clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)
    return g, LatentDistribution(mu=mu, logvar=logvar)


def reparameterize(dist, rng=None):
    """z = mu + exp(logvar/2) * eps with eps ~ N(0, I) from rng.

    rng=None takes the distribution mean (deterministic inference).
    Gradients flow to mu and logvar only.
    """
    mu, logvar = dist.mu, dist.logvar
    if rng is None:
        return mu
    eps = ad.const(rng.standard_normal(mu.data.shape))
    sigma = ad.exp(ad.scale(logvar, 0.5))
    return ad.add(mu, ad.mul(sigma, eps))


def decode_coarse(z, global_feat, registry, cfg, prefix="pmnet"):
    """Decode latent + global feature to (B*n_coarse, 3) coarse coordinates."""
    b = z.data.shape[0]
    if global_feat.data.shape != (b, cfg.feat_dim):
        raise ad.ShapeMismatchError(
            f"decode_coarse: global feature shape {global_feat.data.shape} "
            f"does not match (B={b}, F={cfg.feat_dim})")
    h = ad.concat([z, global_feat], axis=1)
    h = affine_relu(registry, f"{prefix}.dec.l0", h)
    h = affine_relu(registry, f"{prefix}.dec.l1", h)
    out = affine(registry, f"{prefix}.dec.l2", h)                 # (B, 3*Nc)
    return ad.reshape(out, (b * cfg.n_coarse, 3))


def standard_latent(dim, batch=1):
    return LatentDistribution(mu=ad.const(np.zeros((batch, dim))),
                              logvar=ad.const(np.zeros((batch, dim))))


def detached(dist):
    return LatentDistribution(mu=dist.mu.detach(), logvar=dist.logvar.detach())


def pmnet_losses(x_cloud, y_cloud, registry, cfg, rng, batch=1, prefix="pmnet"):
    """Training-time dual-path pass.

    Returns {kl_rec, cd_rec, kl_com, cd_com, yc, yr} where yc/yr are the
    coarse completion / reconstruction coordinate tensors.  KL terms are
    per-sample averages; the completion-path KL pulls its distribution
    toward a gradient-blocked copy of the reconstruction-path one.
    """
    x = _as_coord_tensor(x_cloud)
    y = _as_coord_tensor(y_cloud)

    g_y, q = encode(y, "reconstruction", registry, cfg, batch=batch, prefix=prefix)
    kl_rec = ad.scale(gaussian_kl(q, standard_latent(cfg.latent_dim, batch)), 1.0 / batch)
    z_r = reparameterize(q, rng)
    yr = decode_coarse(z_r, g_y, registry, cfg, prefix=prefix)
    cd_rec = chamfer_distance_tensor(yr, y, batch=batch)

    g_x, p = encode(x, "completion", registry, cfg, batch=batch, prefix=prefix)
    kl_com = ad.scale(gaussian_kl(detached(q), p), 1.0 / batch)
    z_c = reparameterize(p, rng)
    yc = decode_coarse(z_c, g_x, registry, cfg, prefix=prefix)
    cd_com = chamfer_distance_tensor(yc, y, batch=batch)

    return {"kl_rec": kl_rec, "cd_rec": cd_rec, "kl_com": kl_com,
            "cd_com": cd_com, "yc": yc, "yr": yr}
