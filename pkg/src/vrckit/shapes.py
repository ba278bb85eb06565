"""Synthetic shape corpus: analytic surfaces standing in for CAD models.

Six families chosen so that structural relations show up at desk scale:
bilateral symmetry (chair), regular leg arrangement (table), smooth curved
surfaces (lamp, sphere, cylinder) and flat faceted ones (box).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud
from .util import rng_for

FAMILIES = ("sphere", "box", "cylinder", "lamp", "chair", "table")

# symmetry planes implied by each family's construction (unit normals)
_SYMMETRY = {
    "sphere": [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)],
    "box": [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)],
    "cylinder": [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)],
    "lamp": [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0)],
    "chair": [(1.0, 0.0, 0.0)],
    "table": [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0)],
}

_DEFAULT_PARAMS = {
    "sphere": [1.0],                  # radius
    "box": [1.0, 0.8, 0.6],           # lx, ly, lz
    "cylinder": [0.5, 1.4],           # radius, height
    "lamp": [0.45, 0.05, 1.0, 0.35],  # base radius, pole radius, pole height, shade radius
    "chair": [1.0, 1.0, 1.0],         # width, depth, height multipliers
    "table": [1.2, 0.9, 0.8],         # top lx, top ly, leg height
}


@dataclass
class ShapeSpec:
    """One synthetic shape: family plus per-family dimension list."""

    family: str
    parameters: list[float] = field(default_factory=list)
    shape_id: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown shape family '{self.family}'")
        if not self.parameters:
            self.parameters = list(_DEFAULT_PARAMS[self.family])
        if any(p <= 0 for p in self.parameters):
            raise ValueError(f"shape parameters must be positive, got {self.parameters}")
        if not self.shape_id:
            self.shape_id = self.family

    @property
    def symmetry_planes(self):
        return [np.asarray(p) for p in _SYMMETRY[self.family]]


def _sample_quad(rng, n, origin, edge_u, edge_v):
    """n uniform points on the parallelogram origin + s*edge_u + t*edge_v."""
    s = rng.random(n)
    t = rng.random(n)
    return (np.asarray(origin)[None, :]
            + s[:, None] * np.asarray(edge_u)[None, :]
            + t[:, None] * np.asarray(edge_v)[None, :])


def _quad_area(edge_u, edge_v):
    return float(np.linalg.norm(np.cross(edge_u, edge_v)))


def _box_patches(center, size):
    """Six rectangular faces of an axis-aligned box as (area, sampler) pairs."""
    cx, cy, cz = center
    hx, hy, hz = size[0] / 2.0, size[1] / 2.0, size[2] / 2.0
    patches = []
    for axis, (h, a, b) in enumerate([(hx, hy, hz), (hy, hx, hz), (hz, hx, hy)]):
        for sgn in (-1.0, 1.0):
            origin = np.array([cx, cy, cz], dtype=np.float64)
            origin[axis] += sgn * h
            u = np.zeros(3)
            v = np.zeros(3)
            u[(axis + 1) % 3] = 2 * [hx, hy, hz][(axis + 1) % 3]
            v[(axis + 2) % 3] = 2 * [hx, hy, hz][(axis + 2) % 3]
            origin -= u / 2 + v / 2
            patches.append((_quad_area(u, v),
                            lambda rng, n, o=origin.copy(), uu=u.copy(), vv=v.copy():
                            _sample_quad(rng, n, o, uu, vv)))
    return patches


def _disk_patch(center, radius, normal_axis=2):
    area = np.pi * radius ** 2

    def sampler(rng, n):
        r = radius * np.sqrt(rng.random(n))
        th = 2 * np.pi * rng.random(n)
        pts = np.zeros((n, 3))
        ax = [i for i in range(3) if i != normal_axis]
        pts[:, ax[0]] = r * np.cos(th)
        pts[:, ax[1]] = r * np.sin(th)
        return pts + np.asarray(center)[None, :]

    return (area, sampler)


def _lateral_cylinder_patch(center, radius, height):
    area = 2 * np.pi * radius * height

    def sampler(rng, n):
        th = 2 * np.pi * rng.random(n)
        z = (rng.random(n) - 0.5) * height
        pts = np.stack([radius * np.cos(th), radius * np.sin(th), z], axis=1)
        return pts + np.asarray(center)[None, :]

    return (area, sampler)


def _cone_frustum_patch(center, r_bottom, r_top, height):
    slant = np.sqrt((r_bottom - r_top) ** 2 + height ** 2)
    area = np.pi * (r_bottom + r_top) * slant

    def sampler(rng, n):
        # area-uniform in the slant parameter: radius pdf linear in r
        u = rng.random(n)
        r = np.sqrt(u * (r_bottom ** 2 - r_top ** 2) + r_top ** 2) if r_bottom != r_top \
            else np.full(n, r_bottom)
        frac = (r_bottom - r) / (r_bottom - r_top) if r_bottom != r_top else rng.random(n)
        z = frac * height - height / 2.0
        th = 2 * np.pi * rng.random(n)
        pts = np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
        return pts + np.asarray(center)[None, :]

    return (area, sampler)


def _patches_for(spec):
    fam = spec.family
    p = spec.parameters
    if fam == "sphere":
        radius = p[0]

        def sampler(rng, n):
            v = rng.normal(size=(n, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return v * radius

        return [(4 * np.pi * radius ** 2, sampler)]

    if fam == "box":
        return _box_patches((0.0, 0.0, 0.0), (p[0], p[1], p[2]))

    if fam == "cylinder":
        radius, height = p[0], p[1]
        return [
            _lateral_cylinder_patch((0, 0, 0), radius, height),
            _disk_patch((0, 0, height / 2), radius),
            _disk_patch((0, 0, -height / 2), radius),
        ]

    if fam == "lamp":
        base_r, pole_r, pole_h, shade_r = p[0], p[1], p[2], p[3]
        shade_h = 0.45 * pole_h
        base_h = 0.12 * pole_h
        z0 = -pole_h / 2.0
        patches = [
            # smooth rounded base: a squat cone frustum plus floor disk
            _cone_frustum_patch((0, 0, z0 + base_h / 2), base_r, 0.4 * base_r, base_h),
            _disk_patch((0, 0, z0), base_r),
            _lateral_cylinder_patch((0, 0, z0 + base_h + (pole_h - base_h) / 2),
                                    pole_r, pole_h - base_h),
            _cone_frustum_patch((0, 0, z0 + pole_h + shade_h / 2),
                                shade_r, 0.55 * shade_r, shade_h),
        ]
        return patches

    if fam == "chair":
        w, d, h = 0.9 * p[0], 0.9 * p[1], 1.0 * p[2]
        seat_z = 0.0
        leg_h = 0.45 * h
        leg_s = 0.07 * min(w, d)
        back_h = 0.55 * h
        patches = list(_box_patches((0, 0, seat_z), (w, d, 0.08 * h)))
        for sx in (-1, 1):
            for sy in (-1, 1):
                cx = sx * (w / 2 - leg_s)
                cy = sy * (d / 2 - leg_s)
                patches.extend(_box_patches((cx, cy, seat_z - 0.04 * h - leg_h / 2),
                                            (leg_s * 2, leg_s * 2, leg_h)))
        patches.extend(_box_patches((0, -d / 2 + 0.04 * d, seat_z + 0.04 * h + back_h / 2),
                                    (w, 0.08 * d, back_h)))
        return patches

    if fam == "table":
        lx, ly, leg_h = p[0], p[1], p[2]
        top_t = 0.06 * leg_h
        leg_s = 0.05 * min(lx, ly)
        patches = list(_box_patches((0, 0, leg_h / 2 + top_t / 2), (lx, ly, top_t)))
        for sx in (-1, 1):
            for sy in (-1, 1):
                cx = sx * (lx / 2 - 2 * leg_s)
                cy = sy * (ly / 2 - 2 * leg_s)
                patches.extend(_box_patches((cx, cy, 0.0), (leg_s * 2, leg_s * 2, leg_h)))
        return patches

    raise ValueError(f"unknown shape family '{fam}'")


def synth_shape(spec, n_dense, rng_seed):
    """Sample n_dense points area-uniformly on the spec's analytic surface."""
    if n_dense < 1024:
        raise ValueError(f"synth_shape: n_dense must be >= 1024, got {n_dense}")
    rng = rng_for(rng_seed, "shape", spec.shape_id)
    patches = _patches_for(spec)
    areas = np.array([a for a, _ in patches])
    probs = areas / areas.sum()
    counts = rng.multinomial(n_dense, probs)
    parts = [sampler(rng, int(c)) for (_, sampler), c in zip(patches, counts) if c > 0]
    pts = np.concatenate(parts, axis=0)
    return PointCloud(pts, category=spec.family, source="synthetic")


def make_corpus(families, per_family, seed, jitter=0.25):
    """ShapeSpec list with deterministically jittered dimensions per family."""
    specs = []
    for fam in families:
        base = np.array(_DEFAULT_PARAMS[fam])
        rng = rng_for(seed, "corpus", fam)
        for i in range(per_family):
            factors = 1.0 + jitter * (2.0 * rng.random(len(base)) - 1.0)
            params = (base * factors).tolist()
            specs.append(ShapeSpec(fam, params, shape_id=f"{fam}{i:02d}"))
    return specs
