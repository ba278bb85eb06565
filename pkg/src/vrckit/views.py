"""Multi-view partial observation synthesis.

Complete shapes are observed from 26 uniformly arranged virtual cameras
(the nonzero {-1,0,1}^3 grid directions under one random global rotation).
Partials come either from visibility (hidden-point removal on a dense cloud,
"mvp" mode) or from distance-based cropping at a fixed missing ratio
("mvp40" mode); both are then downsampled to the working resolution with
farthest point sampling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import (PointCloud, farthest_point_sample, normalize_unit_sphere,
                       poisson_disk_progressive)
from .shapes import synth_shape
from .util import rng_for

HPR_FLIP_GAMMA = 10.0
DEFAULT_CAMERA_RADIUS = 2.0


def _base_grid_directions():
    """The 26 nonzero {-1,0,1}^3 vectors, normalized, in lexicographic order."""
    dirs = []
    for x in (-1, 0, 1):
        for y in (-1, 0, 1):
            for z in (-1, 0, 1):
                if (x, y, z) != (0, 0, 0):
                    v = np.array([x, y, z], dtype=np.float64)
                    dirs.append(v / np.linalg.norm(v))
    return np.asarray(dirs)


def _random_rotation(rng):
    """Uniform random rotation from a normalized 4-D Gaussian quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass
class CameraPoseSet:
    """26 unit view directions at a fixed radius, looking at the origin."""

    directions: np.ndarray
    global_rotation: np.ndarray
    radius: float = DEFAULT_CAMERA_RADIUS

    def position(self, camera_id):
        return self.radius * self.directions[camera_id]

    def __len__(self):
        return self.directions.shape[0]


def camera_poses_26(rng_seed, radius=DEFAULT_CAMERA_RADIUS):
    """The fixed 26-pose arrangement under a seed-determined global rotation."""
    rot = _random_rotation(rng_for(rng_seed, "camera-rotation"))
    dirs = _base_grid_directions() @ rot.T
    return CameraPoseSet(directions=dirs, global_rotation=rot, radius=radius)


def hidden_point_removal(points, camera_position, gamma=HPR_FLIP_GAMMA):
    """Indices of points visible from the camera, via spherical flipping.

    Each point is reflected outward about the sphere of radius
    gamma * max ||p - c|| centered on the camera; points whose images land
    on the convex hull of the flipped set plus the camera are visible.
    """
    q = points - np.asarray(camera_position, dtype=np.float64)[None, :]
    norms = np.linalg.norm(q, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("hidden_point_removal: a point coincides with the camera")
    r_flip = gamma * float(np.max(norms))
    flipped = q * (2.0 * r_flip / norms - 1.0)[:, None]
    hull = ConvexHull(np.vstack([flipped, np.zeros(3)]))
    visible = hull.vertices[hull.vertices < points.shape[0]]
    return np.sort(visible)


def render_partial(dense, camera_position, target_n):
    """Visible subset of a dense cloud from one camera, FPS'd to target_n."""
    pts = dense.points if isinstance(dense, PointCloud) else np.asarray(dense)
    cam = np.asarray(camera_position, dtype=np.float64)
    if np.linalg.norm(cam) <= 1.0:
        raise ValueError("render_partial: camera must lie outside the unit sphere")
    visible = hidden_point_removal(pts, cam)
    if len(visible) < target_n:
        raise ValueError(
            f"render_partial: only {len(visible)} visible points from this view, "
            f"need {target_n}")
    vis_pts = pts[visible]
    keep = farthest_point_sample(vis_pts, target_n, seed_index=0)
    out = vis_pts[keep]
    if isinstance(dense, PointCloud):
        return dense.with_points(out)
    return PointCloud(out)


def crop_missing_ratio(complete_hi, camera_position, missing_ratio, target_n):
    """Drop the camera-farthest fraction of points, then FPS to target_n."""
    if not 0.0 < missing_ratio < 1.0:
        raise ValueError(f"crop_missing_ratio: ratio {missing_ratio} outside (0, 1)")
    if missing_ratio not in (0.25, 0.5):
        warnings.warn(f"crop_missing_ratio: nonstandard missing ratio {missing_ratio}",
                      stacklevel=2)
    pts = complete_hi.points if isinstance(complete_hi, PointCloud) else np.asarray(complete_hi)
    n = pts.shape[0]
    n_drop = int(np.floor(missing_ratio * n))
    n_keep = n - n_drop
    if target_n > n_keep:
        raise ValueError(
            f"crop_missing_ratio: target {target_n} exceeds kept count {n_keep}")
    cam = np.asarray(camera_position, dtype=np.float64)
    d2 = np.sum((pts - cam[None, :]) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")         # ties toward smaller index
    kept = np.sort(order[:n_keep])                # original cloud order
    kept_pts = pts[kept]
    keep = farthest_point_sample(kept_pts, target_n, seed_index=0)
    out = kept_pts[keep]
    if isinstance(complete_hi, PointCloud):
        return complete_hi.with_points(out)
    return PointCloud(out)


@dataclass
class DatasetPair:
    """One partial observation with its multi-resolution ground truths."""

    pair_id: str
    shape_id: str
    category: str
    camera_id: int
    partial: PointCloud
    gts: dict = field(default_factory=dict)    # resolution -> PointCloud
    split: str = "train"
    missing_ratio: float | None = None


def assign_splits(specs, test_fraction=0.25):
    """Deterministic shape-level split: within each family, the trailing
    fraction of shapes goes to the test set; no shape straddles splits."""
    by_family = {}
    for spec in specs:
        by_family.setdefault(spec.family, []).append(spec.shape_id)
    split = {}
    for family, ids in by_family.items():
        n_test = int(np.floor(test_fraction * len(ids)))
        for sid in ids[:len(ids) - n_test]:
            split[sid] = "train"
        for sid in ids[len(ids) - n_test:]:
            split[sid] = "test"
    return split


def build_dataset(specs, resolutions, mode, rng_seed,
                  missing_ratio=0.5, test_fraction=0.25,
                  camera_radius=DEFAULT_CAMERA_RADIUS, oversample=4):
    """Generate DatasetPairs: per shape, PDS ground truths at each resolution
    and 26 partials at the smallest resolution.

    mode "mvp" renders self-occluded views via hidden-point removal; "mvp40"
    crops by missing ratio from the highest-resolution ground truth.  Fully
    deterministic for a fixed seed.
    """
    if mode not in ("mvp", "mvp40"):
        raise ValueError(f"build_dataset: unknown mode '{mode}'")
    resolutions = sorted(int(r) for r in resolutions)
    partial_n = resolutions[0]
    n_dense = oversample * resolutions[-1]
    split = assign_splits(specs, test_fraction)
    pairs = []
    for spec in specs:
        try:
            dense = synth_shape(spec, n_dense, rng_seed)
            dense_norm, _, _ = normalize_unit_sphere(dense)
            gts = poisson_disk_progressive(dense_norm, resolutions)
            poses = camera_poses_26(rng_for(rng_seed, "pose-seed", spec.shape_id)
                                    .integers(2 ** 32), radius=camera_radius)
        except Exception as err:
            raise RuntimeError(
                f"build_dataset: shape '{spec.shape_id}' ({spec.family}): {err}") from err
        for cam_id in range(len(poses)):
            pos = poses.position(cam_id)
            try:
                if mode == "mvp":
                    partial = render_partial(dense_norm, pos, partial_n)
                    ratio = None
                else:
                    partial = crop_missing_ratio(gts[resolutions[-1]], pos,
                                                 missing_ratio, partial_n)
                    ratio = missing_ratio
            except Exception as err:
                raise RuntimeError(
                    f"build_dataset: shape '{spec.shape_id}' camera {cam_id}: "
                    f"{err}") from err
            pairs.append(DatasetPair(
                pair_id=f"{spec.shape_id}_v{cam_id:02d}",
                shape_id=spec.shape_id,
                category=spec.family,
                camera_id=cam_id,
                partial=partial,
                gts={r: gts[r] for r in resolutions},
                split=split[spec.shape_id],
                missing_ratio=ratio,
            ))
    return pairs


def write_dataset(pairs, out_dir, dataset_name, mode, seed, divisor, extra_meta=None):
    """Write clouds as PLY plus a hashed manifest; returns the manifest hash.

    Ground truths are shared across the 26 views of a shape, so they are
    written once per shape and referenced by every record.
    """
    from . import io as dio

    out = Path(out_dir)
    clouds = out / "clouds"
    clouds.mkdir(parents=True, exist_ok=True)
    records = []
    written_gts = set()
    for pair in pairs:
        partial_rel = f"clouds/{pair.pair_id}_partial.ply"
        dio.write_ply(pair.partial, out / partial_rel)
        gt_paths = {}
        for res in sorted(pair.gts):
            gt_rel = f"clouds/{pair.shape_id}_gt{res}.ply"
            if gt_rel not in written_gts:
                dio.write_ply(pair.gts[res], out / gt_rel)
                written_gts.add(gt_rel)
            gt_paths[str(res)] = gt_rel
        rec = {
            "pair_id": pair.pair_id,
            "shape_id": pair.shape_id,
            "category": pair.category,
            "camera_id": pair.camera_id,
            "partial_path": partial_rel,
            "gt_paths": gt_paths,
            "split": pair.split,
        }
        if pair.missing_ratio is not None:
            rec["missing_ratio"] = pair.missing_ratio
        records.append(rec)
    manifest = {
        "dataset": dataset_name,
        "mode": mode,
        "seed": int(seed),
        "divisor": int(divisor),
        "records": records,
    }
    if extra_meta:
        manifest.update(extra_meta)
    return dio.write_manifest(manifest, out / "manifest.json")


def load_dataset(data_dir, split=None):
    """Read a dataset directory back into DatasetPairs (clouds included)."""
    from . import io as dio

    base = Path(data_dir)
    manifest = dio.read_manifest(base / "manifest.json")
    gt_cache = {}
    pairs = []
    for rec in manifest["records"]:
        if split is not None and rec["split"] != split:
            continue
        partial = dio.read_ply(base / rec["partial_path"])
        partial.category = rec["category"]
        gts = {}
        for res_str, rel in rec["gt_paths"].items():
            if rel not in gt_cache:
                cloud = dio.read_ply(base / rel)
                cloud.category = rec["category"]
                gt_cache[rel] = cloud
            gts[int(res_str)] = gt_cache[rel]
        pairs.append(DatasetPair(
            pair_id=rec["pair_id"],
            shape_id=rec["shape_id"],
            category=rec["category"],
            camera_id=rec["camera_id"],
            partial=partial,
            gts=gts,
            split=rec["split"],
            missing_ratio=rec.get("missing_ratio"),
        ))
    return pairs, manifest
