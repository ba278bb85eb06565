"""Relational point kernels.

Building blocks for the refinement network:

  psa_forward   neighborhood self-attention: per-neighbor weight vectors are
                predicted from the concatenated neighborhood and multiply
                transformed neighbor features, summed over the neighborhood.
  psk_forward   two psa branches with different neighborhood sizes, fused by
                per-channel two-way softmax gates driven by a pooled
                channel descriptor.
  rpsk_forward  psk wrapped with a residual path.
  ep_pool       farthest-point-sampled centers with channelwise neighborhood
                max features.
  eu_unpool     inverse-distance interpolation of coarse features onto fine
                points, concatenated with skip features.
  efe_expand    feature upsampling with learned per-copy codes, emitting
                coordinate offsets.

All functions accept flat (B*N, C) feature tensors with `batch` equally
sized clouds stacked along axis 0; neighbor indices never cross clouds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import fps_batch, knn_indices_fast, knn_query_fast
from .util import uniform_fan_in


@dataclass
class PSAConfig:
    k: int
    c_in: int
    c_mid: int
    c_out: int

    def __post_init__(self):
        if self.k < 1 or min(self.c_in, self.c_mid, self.c_out) < 1:
            raise ValueError("PSAConfig: k and channel widths must be >= 1")


@dataclass
class PSKConfig:
    c: int
    c_in: int = 0
    branch_ks: tuple = (8, 16)
    d: int = 0

    def __post_init__(self):
        if self.c_in == 0:
            self.c_in = self.c
        if self.d == 0:
            self.d = max(self.c // 4, 8)
        if len(self.branch_ks) != 2 or self.branch_ks[0] == self.branch_ks[1]:
            raise ValueError("PSKConfig: two distinct branch neighborhood sizes required")
        if self.d < 1:
            raise ValueError("PSKConfig: reduced width must be >= 1")


def init_affine(registry, rng, path, c_in, c_out):
    registry.add(f"{path}.w", uniform_fan_in(rng, c_in, (c_in, c_out)))
    registry.add(f"{path}.b", np.zeros(c_out))


def affine(registry, path, x):
    return ad.linear(x, registry.get(f"{path}.w"), registry.get(f"{path}.b"))


def affine_relu(registry, path, x):
    return ad.relu(affine(registry, path, x))


def init_psa_params(registry, rng, prefix, cfg):
    init_affine(registry, rng, f"{prefix}.sigma", cfg.c_in, cfg.c_mid)
    init_affine(registry, rng, f"{prefix}.xi", cfg.c_in, cfg.c_mid)
    init_affine(registry, rng, f"{prefix}.gamma0", (cfg.k + 1) * cfg.c_mid, cfg.c_mid)
    init_affine(registry, rng, f"{prefix}.gamma1", cfg.c_mid, cfg.k * cfg.c_out)
    init_affine(registry, rng, f"{prefix}.beta", cfg.c_in, cfg.c_out)


def _fused_point_transforms(features, cfg, registry, prefix):
    """relu-affine xi / sigma / beta evaluated as one gemm, then sliced.

    The three transforms share the input, so stacking their weight matrices
    keeps results identical while cutting dispatch overhead.
    """
    w = ad.concat([registry.get(f"{prefix}.xi.w"),
                   registry.get(f"{prefix}.sigma.w"),
                   registry.get(f"{prefix}.beta.w")], axis=1)
    b = ad.concat([registry.get(f"{prefix}.xi.b"),
                   registry.get(f"{prefix}.sigma.b"),
                   registry.get(f"{prefix}.beta.b")], axis=0)
    fused = ad.relu(ad.linear(features, w, b))
    cm, co = cfg.c_mid, cfg.c_out
    xi = ad.slice_(fused, (slice(None), slice(0, cm)))
    sig = ad.slice_(fused, (slice(None), slice(cm, 2 * cm)))
    values = ad.slice_(fused, (slice(None), slice(2 * cm, 2 * cm + co)))
    return xi, sig, values


def psa_forward(features, coords, neighbor_idx, cfg, registry, prefix):
    """Neighborhood self-attention over canonical (distance-ordered) KNN.

    features: (N, c_in) Tensor; neighbor_idx: (N, k) int array whose rows are
    each point's neighbors sorted ascending by distance.
    """
    n = features.data.shape[0]
    if neighbor_idx.shape != (n, cfg.k):
        raise ad.ShapeMismatchError(
            f"psa_forward: neighbor index shape {neighbor_idx.shape} "
            f"does not match (N={n}, k={cfg.k})")
    xi, sig, values = _fused_point_transforms(features, cfg, registry, prefix)
    # one fused neighbor gather for both the relation and value streams
    gathered = ad.gather(ad.concat([xi, values], axis=1), neighbor_idx)
    g_xi = ad.slice_(gathered, (slice(None), slice(None), slice(0, cfg.c_mid)))
    g_val = ad.slice_(gathered, (slice(None), slice(None),
                                 slice(cfg.c_mid, cfg.c_mid + cfg.c_out)))
    flat = ad.reshape(g_xi, (n, cfg.k * cfg.c_mid))
    delta = ad.concat([sig, flat], axis=1)                         # (N, (k+1)cm)
    hidden = affine_relu(registry, f"{prefix}.gamma0", delta)
    weights = affine(registry, f"{prefix}.gamma1", hidden)         # (N, k*c_out)
    weights = ad.reshape(weights, (n, cfg.k, cfg.c_out))
    return ad.sum_reduce(ad.mul(weights, g_val), axis=1)           # (N, c_out)


def init_psk_params(registry, rng, prefix, cfg):
    for i, k in enumerate(cfg.branch_ks):
        init_psa_params(registry, rng, f"{prefix}.branch{i}",
                        PSAConfig(k=k, c_in=cfg.c_in, c_mid=max(cfg.c // 2, 4),
                                  c_out=cfg.c))
    init_affine(registry, rng, f"{prefix}.squeeze", cfg.c, cfg.d)   # W (d x C)^T
    registry.add(f"{prefix}.gate_a", uniform_fan_in(rng, cfg.d, (cfg.d, cfg.c)))
    registry.add(f"{prefix}.gate_b", uniform_fan_in(rng, cfg.d, (cfg.d, cfg.c)))


def neighbor_indices(coords_np, ks, batch=1):
    """Per-cloud KNN index arrays (flat, offset per cloud) for each k in ks."""
    n_total = coords_np.shape[0]
    if n_total % batch:
        raise ValueError("neighbor_indices: rows not divisible by batch")
    n = n_total // batch
    out = [np.empty((n_total, k), dtype=np.int64) for k in ks]
    for b in range(batch):
        pts = coords_np[b * n:(b + 1) * n]
        kmax = max(ks)
        idx_full = knn_indices_fast(pts, kmax)
        for j, k in enumerate(ks):
            out[j][b * n:(b + 1) * n] = idx_full[:, :k] + b * n
    return out


def psk_forward(features, coords, cfg, registry, prefix, batch=1, neighbor_idx=None):
    """Selective two-branch fusion with per-channel softmax gates."""
    n_total = features.data.shape[0]
    if n_total == 0:
        raise ValueError("psk_forward: empty feature set")
    if n_total % batch:
        raise ad.ShapeMismatchError("psk_forward: rows not divisible by batch")
    n = n_total // batch
    coords_np = coords.data if isinstance(coords, ad.Tensor) else np.asarray(coords)
    if neighbor_idx is None:
        neighbor_idx = neighbor_indices(coords_np, cfg.branch_ks, batch)
    cfg0 = PSAConfig(k=cfg.branch_ks[0], c_in=cfg.c_in,
                     c_mid=max(cfg.c // 2, 4), c_out=cfg.c)
    cfg1 = PSAConfig(k=cfg.branch_ks[1], c_in=cfg.c_in,
                     c_mid=max(cfg.c // 2, 4), c_out=cfg.c)
    u1 = psa_forward(features, coords, neighbor_idx[0], cfg0, registry, f"{prefix}.branch0")
    u2 = psa_forward(features, coords, neighbor_idx[1], cfg1, registry, f"{prefix}.branch1")
    u = ad.add(u1, u2)
    # pooled channel descriptor; canonical accumulation keeps the gates
    # bit-identical under point permutation
    s = ad.mean_reduce(ad.reshape(u, (batch, n, cfg.c)), axis=1, canonical=True)
    z = affine_relu(registry, f"{prefix}.squeeze", s)               # (B, d)
    zero_bias = ad.const(np.zeros(cfg.c))
    logit_a = ad.linear(z, registry.get(f"{prefix}.gate_a"), zero_bias)
    logit_b = ad.linear(z, registry.get(f"{prefix}.gate_b"), zero_bias)
    stacked = ad.concat([ad.reshape(logit_a, (batch, cfg.c, 1)),
                         ad.reshape(logit_b, (batch, cfg.c, 1))], axis=2)
    gates = ad.softmax(stacked, axis=2)                             # (B, C, 2)
    gate_a = ad.reshape(ad.slice_(gates, (slice(None), slice(None), 0)), (batch, 1, cfg.c))
    gate_b = ad.reshape(ad.slice_(gates, (slice(None), slice(None), 1)), (batch, 1, cfg.c))
    ga = ad.reshape(ad.tile(gate_a, (1, n, 1)), (n_total, cfg.c))
    gb = ad.reshape(ad.tile(gate_b, (1, n, 1)), (n_total, cfg.c))
    return ad.add(ad.mul(u1, ga), ad.mul(u2, gb))


def init_rpsk_params(registry, rng, prefix, cfg):
    init_psk_params(registry, rng, f"{prefix}.main", cfg)
    if cfg.c_in != cfg.c:
        init_affine(registry, rng, f"{prefix}.proj", cfg.c_in, cfg.c)


def rpsk_forward(features, coords, cfg, registry, prefix, batch=1, neighbor_idx=None):
    """psk plus residual: identity when widths match, affine projection else."""
    main = psk_forward(features, coords, cfg, registry, f"{prefix}.main",
                       batch=batch, neighbor_idx=neighbor_idx)
    if cfg.c_in == cfg.c:
        return ad.add(main, features)
    return ad.add(main, affine(registry, f"{prefix}.proj", features))


def ep_pool(features, coords, ratio, k, batch=1):
    """Pool to ceil(ratio*N) farthest-point centers; features are the
    channelwise max over each center's k nearest input points.

    Returns (pooled features (B*M, C), pooled coords (B*M, 3) Tensor,
    kept flat indices (B*M,)).
    """
    n_total = features.data.shape[0]
    n = n_total // batch
    m = int(np.ceil(ratio * n))
    if m < 1:
        raise ValueError("ep_pool: pooled size must be >= 1")
    if k > n:
        raise ValueError(f"ep_pool: k={k} exceeds cloud size {n}")
    coords_t = coords if isinstance(coords, ad.Tensor) else ad.const(coords)
    pts = coords_t.data.reshape(batch, n, 3)
    kept = fps_batch(pts, m, seed_index=0)                   # (B, m)
    kept_flat = (kept + np.arange(batch)[:, None] * n).reshape(-1)
    nbr = np.empty((batch * m, k), dtype=np.int64)
    for b in range(batch):
        idx = knn_query_fast(pts[b], pts[b][kept[b]], k)
        nbr[b * m:(b + 1) * m] = idx + b * n
    pooled_coords = ad.gather(coords_t, kept_flat)
    gathered = ad.gather(features, nbr)                      # (B*M, k, C)
    pooled = ad.max_reduce(gathered, axis=1)                 # (B*M, C)
    return pooled, pooled_coords, kept_flat


def eu_unpool(coarse_feats, coarse_coords, fine_coords, skip_feats, batch=1):
    """Interpolate coarse features onto fine points and append skip features.

    Weights are normalized inverse squared distances, 1/(d^2 + 1e-8), over
    the 3 nearest coarse points (fewer when M < 3).  A fine point exactly
    coincident with a coarse point copies that coarse feature bit-exactly.
    """
    m_total = coarse_feats.data.shape[0]
    n_total = fine_coords.data.shape[0] if isinstance(fine_coords, ad.Tensor) \
        else np.asarray(fine_coords).shape[0]
    if m_total == 0:
        raise ValueError("eu_unpool: empty coarse set")
    m = m_total // batch
    n = n_total // batch
    kn = min(3, m)
    c = coarse_feats.data.shape[1]

    coarse_t = coarse_coords if isinstance(coarse_coords, ad.Tensor) else ad.const(coarse_coords)
    fine_t = fine_coords if isinstance(fine_coords, ad.Tensor) else ad.const(fine_coords)
    idx = np.empty((n_total, kn), dtype=np.int64)
    for b in range(batch):
        sub = knn_query_fast(coarse_t.data[b * m:(b + 1) * m],
                             fine_t.data[b * n:(b + 1) * n], kn)
        idx[b * n:(b + 1) * n] = sub + b * m

    near = ad.gather(coarse_t, idx)                          # (N, kn, 3)
    fine_e = ad.tile(ad.reshape(fine_t, (n_total, 1, 3)), (1, kn, 1))
    d2 = ad.sum_reduce(ad.square(ad.sub(fine_e, near)), axis=2)   # (N, kn)
    d2_eps = ad.add(d2, ad.const(np.full((n_total, kn), 1e-8)))
    weights = ad.softmax(ad.scale(ad.log(d2_eps), -1.0), axis=1)  # 1/(d^2+eps), normalized
    feats_n = ad.gather(coarse_feats, idx)                   # (N, kn, C)
    w_full = ad.tile(ad.reshape(weights, (n_total, kn, 1)), (1, 1, c))
    interp = ad.sum_reduce(ad.mul(feats_n, w_full), axis=1)  # (N, C)

    # exact-coincidence shortcut: d == 0 rows copy the nearest coarse feature
    zero_rows = (d2.data[:, 0] == 0.0)
    if np.any(zero_rows):
        mask = np.repeat(zero_rows[:, None].astype(np.float64), c, axis=1)
        hard = ad.gather(coarse_feats, idx[:, 0])
        interp = ad.add(ad.mul(interp, ad.const(1.0 - mask)),
                        ad.mul(hard, ad.const(mask)))
    if skip_feats is None:
        return interp
    return ad.concat([interp, skip_feats], axis=1)


@dataclass
class EFEConfig:
    up_ratio: int
    c_in: int
    c_out: int
    code_dim: int = 8

    def __post_init__(self):
        if self.up_ratio < 1:
            raise ValueError("EFEConfig: up_ratio must be >= 1")


def init_efe_params(registry, rng, prefix, cfg):
    registry.add(f"{prefix}.codes",
                 rng.uniform(-1.0, 1.0, size=(cfg.up_ratio, cfg.code_dim)))
    init_affine(registry, rng, f"{prefix}.expand", cfg.c_in + cfg.code_dim, cfg.c_out)
    init_affine(registry, rng, f"{prefix}.offset", cfg.c_out, 3)


def efe_expand(features, coords, cfg, registry, prefix):
    """Expand each point into up_ratio feature rows plus coordinate offsets.

    Row r*i+j holds copy j of point i.  Returns (features (r*N, c_out),
    offsets (r*N, 3)).
    """
    n = features.data.shape[0]
    r = cfg.up_ratio
    feats_e = ad.reshape(ad.tile(ad.reshape(features, (n, 1, cfg.c_in)), (1, r, 1)),
                         (n * r, cfg.c_in))
    codes = registry.get(f"{prefix}.codes")
    codes_e = ad.reshape(ad.tile(ad.reshape(codes, (1, r, cfg.code_dim)), (n, 1, 1)),
                         (n * r, cfg.code_dim))
    mixed = ad.concat([feats_e, codes_e], axis=1)
    out = affine_relu(registry, f"{prefix}.expand", mixed)       # (rN, c_out)
    offsets = affine(registry, f"{prefix}.offset", out)          # (rN, 3)
    return out, offsets


def tile_rows(x, r):
    """Repeat each row of a 2-D tensor r times, matching efe_expand's order."""
    n, c = x.data.shape
    return ad.reshape(ad.tile(ad.reshape(x, (n, 1, c)), (1, r, 1)), (n * r, c))
