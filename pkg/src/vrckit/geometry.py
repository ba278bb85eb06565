"""Point-cloud primitives: neighborhoods, sampling, normalization, mirroring.

All operations are pure functions of their inputs and deterministic; ties are
always broken by the smaller index.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class PointCloud:
    """Ordered N x 3 float64 point set, optionally tagged with a category."""

    points: np.ndarray
    category: str | None = None
    source: str = "synthetic"   # "synthetic" | "file"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"point cloud must be N x 3 with N >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, pts):
        return PointCloud(pts, category=self.category, source=self.source)


def _as_points(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def knn(cloud, queries, k):
    """Indices of the k nearest cloud points per query, sorted by distance.

    Exhaustive scan; equal distances are resolved toward the smaller index,
    so results are deterministic.  Returns an N_q x k int array.
    """
    pts = _as_points(cloud)
    q = _as_points(queries)
    n = pts.shape[0]
    if k > n:
        raise ValueError(f"knn: k={k} exceeds cloud size {n}")
    out = np.empty((q.shape[0], k), dtype=np.int64)
    # chunk queries so the (chunk, N, 3) temporary stays small
    chunk = max(1, int(1.2e6 // n))
    for s in range(0, q.shape[0], chunk):
        block = q[s:s + chunk]
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        order = np.argsort(d2, axis=1, kind="stable")
        out[s:s + chunk] = order[:, :k]
    return out


def knn_indices_fast(pts, k):
    """Self-KNN via argpartition, for hot inner loops.

    Exact for clouds with distinct pairwise distances (the training case);
    boundary ties may differ from knn()'s smallest-index rule.
    """
    n = pts.shape[0]
    sq = np.sum(pts * pts, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    return _smallest_k(d2, k)


def knn_query_fast(pts, queries, k):
    """KNN of queries against pts via the squared-norm expansion."""
    d2 = (np.sum(queries * queries, axis=1)[:, None]
          - 2.0 * (queries @ pts.T) + np.sum(pts * pts, axis=1)[None, :])
    return _smallest_k(d2, k)


def _smallest_k(d2, k):
    n = d2.shape[1]
    if k < n:
        cand = np.argpartition(d2, k - 1, axis=1)[:, :k]
    else:
        cand = np.tile(np.arange(n), (d2.shape[0], 1))
    rows = np.arange(d2.shape[0])[:, None]
    order = np.argsort(d2[rows, cand], axis=1, kind="stable")
    return cand[rows, order]


def farthest_point_sample(cloud, m, seed_index=0):
    """Greedy max-min subset: each pick maximizes distance to the chosen set."""
    pts = _as_points(cloud)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"farthest_point_sample: m={m} outside [1, {n}]")
    if not 0 <= seed_index < n:
        raise ValueError(f"farthest_point_sample: seed index {seed_index} out of range")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = seed_index
    d2 = np.sum((pts - pts[seed_index]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(d2))  # first max on ties = smallest index
        chosen[i] = nxt
        np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1), out=d2)
    return chosen


def fps_batch(pts, m, seed_index=0):
    """farthest_point_sample over a (B, N, 3) stack, vectorized across B."""
    b, n, _ = pts.shape
    if not 1 <= m <= n:
        raise ValueError(f"fps_batch: m={m} outside [1, {n}]")
    chosen = np.empty((b, m), dtype=np.int64)
    chosen[:, 0] = seed_index
    rows = np.arange(b)
    sq = np.einsum("bnd,bnd->bn", pts, pts)
    cur = pts[rows, seed_index]
    d2 = sq - 2.0 * np.einsum("bnd,bd->bn", pts, cur) + np.einsum("bd,bd->b", cur, cur)[:, None]
    for i in range(1, m):
        nxt = np.argmax(d2, axis=1)
        chosen[:, i] = nxt
        cur = pts[rows, nxt]
        nd = sq - 2.0 * np.einsum("bnd,bd->bn", pts, cur) + np.einsum("bd,bd->b", cur, cur)[:, None]
        np.minimum(d2, nd, out=d2)
    return chosen


def poisson_disk_sample(dense, target_n, return_radius=False):
    """Evenly spaced subset via weighted sample elimination.

    Repeatedly removes the most crowded point (largest accumulated weight
    over neighbors within d_max) until target_n remain.  Requires the input
    to be oversampled by at least 4x.
    """
    sets, r_final = _sample_elimination(dense, [target_n])
    out = sets[target_n]
    if return_radius:
        return out, r_final[target_n]
    return out


def poisson_disk_progressive(dense, targets):
    """One elimination run yielding nested subsets for several target sizes."""
    sets, _ = _sample_elimination(dense, sorted(set(targets), reverse=True))
    return sets


def _sample_elimination(dense, targets_desc):
    pts = _as_points(dense)
    n = pts.shape[0]
    smallest = min(targets_desc)
    if n < 4 * smallest:
        raise ValueError(
            f"poisson_disk_sample: need at least {4 * smallest} dense points "
            f"for target {smallest}, got {n}")

    # spacing heuristic: local density of the dense cloud estimates surface
    # area, which sets the target disk radius r and the weight radius d_max
    nn_d, _ = cKDTree(pts).query(pts, k=2)
    area_est = n * (2.0 * float(np.mean(nn_d[:, 1]))) ** 2

    cloud_src = dense if isinstance(dense, PointCloud) else None
    alive_idx = np.arange(n)
    results = {}
    radii = {}
    for target in targets_desc:
        sub = pts[alive_idx]
        m = len(sub)
        r_target = float(np.sqrt(area_est / (2.0 * np.sqrt(3.0) * target)))
        d_max = 2.0 * r_target
        pairs = cKDTree(sub).query_pairs(d_max, output_type="ndarray")
        weights = np.zeros(m)
        nbrs = [[] for _ in range(m)]
        if len(pairs):
            d = np.sqrt(np.sum((sub[pairs[:, 0]] - sub[pairs[:, 1]]) ** 2, axis=1))
            contrib = (1.0 - d / d_max) ** 8
            np.add.at(weights, pairs[:, 0], contrib)
            np.add.at(weights, pairs[:, 1], contrib)
            for (i, j), c in zip(pairs.tolist(), contrib.tolist()):
                nbrs[i].append((j, c))
                nbrs[j].append((i, c))
        alive = np.ones(m, dtype=bool)
        heap = [(-weights[i], i) for i in range(m)]
        heapq.heapify(heap)
        remaining = m
        while remaining > target:
            w_neg, i = heapq.heappop(heap)
            if not alive[i] or -w_neg != weights[i]:
                continue  # stale entry
            alive[i] = False
            remaining -= 1
            for j, c in nbrs[i]:
                if alive[j]:
                    weights[j] -= c
                    heapq.heappush(heap, (-weights[j], j))
        alive_idx = alive_idx[alive]
        sel = pts[alive_idx].copy()
        results[target] = (cloud_src.with_points(sel) if cloud_src is not None
                           else PointCloud(sel))
        if len(sel) > 1:
            dd, _ = cKDTree(sel).query(sel, k=2)
            radii[target] = float(np.min(dd[:, 1]))
        else:
            radii[target] = float("inf")
    return results, radii


def normalize_unit_sphere(cloud):
    """Center at the centroid and scale the farthest point to norm 1.

    Returns (normalized cloud, centroid, scale); the inverse transform is
    p * scale + centroid.  A degenerate all-coincident cloud keeps scale 1.
    """
    pts = _as_points(cloud)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scale = float(np.max(np.linalg.norm(centered, axis=1)))
    if scale == 0.0:
        scale = 1.0
    out = centered / scale
    if isinstance(cloud, PointCloud):
        return cloud.with_points(out), centroid, scale
    return PointCloud(out), centroid, scale


def mirror(cloud, plane_normal):
    """Reflect across the origin plane with the given unit normal."""
    n = np.asarray(plane_normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise ValueError("mirror: plane normal must be nonzero")
    n = n / norm
    pts = _as_points(cloud)
    out = pts - 2.0 * (pts @ n)[:, None] * n[None, :]
    if isinstance(cloud, PointCloud):
        return cloud.with_points(out)
    return PointCloud(out)
