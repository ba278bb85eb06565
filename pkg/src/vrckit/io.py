"""On-disk formats: ASCII PLY clouds, dataset manifests, parameter checkpoints.

Every writer is canonical: identical in-memory values produce identical
bytes, so fixtures diff cleanly and manifest hashes are reproducible.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud


class PlyFormatError(ValueError):
    """Raised on malformed PLY input."""


class ManifestError(ValueError):
    """Raised on manifest schema violations; message carries a JSON pointer."""


def write_ply(cloud, path):
    """ASCII PLY with x/y/z vertex properties at 9 significant digits."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    path = Path(path)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    body = "\n".join("%.9g %.9g %.9g" % (x, y, z) for x, y, z in pts)
    path.write_text("\n".join(lines) + "\n" + body + "\n", encoding="utf-8")


def read_ply(path):
    """Parse the PLY files written by write_ply (ASCII, vertex-only)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyFormatError(f"{path}: missing 'ply' magic line")
    n_vertex = None
    header_end = None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.strip().split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1:] != ["ascii", "1.0"]:
                raise PlyFormatError(f"{path}: unsupported format {' '.join(tok[1:])}")
        elif tok[0] == "element":
            if tok[1] != "vertex":
                raise PlyFormatError(f"{path}: unsupported element '{tok[1]}'")
            n_vertex = int(tok[2])
        elif tok[0] == "end_header":
            header_end = i
            break
    if n_vertex is None or header_end is None:
        raise PlyFormatError(f"{path}: incomplete header")
    body = [ln for ln in lines[header_end + 1:] if ln.strip()]
    if len(body) != n_vertex:
        raise PlyFormatError(
            f"{path}: header declares {n_vertex} vertices but body has {len(body)} rows")
    pts = np.empty((n_vertex, 3))
    for r, ln in enumerate(body):
        tok = ln.split()
        if len(tok) < 3:
            raise PlyFormatError(f"{path}: row {r} has {len(tok)} columns, expected 3")
        pts[r] = [float(tok[0]), float(tok[1]), float(tok[2])]
    return PointCloud(pts, source="file")


# --------------------------------------------------------------------------
# Dataset manifest
# --------------------------------------------------------------------------

_RECORD_REQUIRED = ("pair_id", "category", "camera_id", "partial_path", "gt_paths", "split")


def canonical_json_bytes(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def manifest_hash(manifest):
    """SHA-256 of the canonical manifest bytes, excluding the hash field itself."""
    body = {k: v for k, v in manifest.items() if k != "hash"}
    return hashlib.sha256(canonical_json_bytes(body)).hexdigest()


def validate_manifest(manifest, base_dir=None, check_files=True):
    for key in ("dataset", "mode", "seed", "divisor", "records"):
        if key not in manifest:
            raise ManifestError(f"/{key}: missing required key")
    if manifest["mode"] not in ("mvp", "mvp40"):
        raise ManifestError(f"/mode: expected 'mvp' or 'mvp40', got {manifest['mode']!r}")
    seen = set()
    split_by_shape = {}
    for i, rec in enumerate(manifest["records"]):
        where = f"/records/{i}"
        for key in _RECORD_REQUIRED:
            if key not in rec:
                raise ManifestError(f"{where}/{key}: missing required key "
                                    f"(pair_id={rec.get('pair_id', '?')})")
        if rec["split"] not in ("train", "test"):
            raise ManifestError(f"{where}/split: expected train|test, got {rec['split']!r}")
        if rec["pair_id"] in seen:
            raise ManifestError(f"{where}/pair_id: duplicate '{rec['pair_id']}'")
        seen.add(rec["pair_id"])
        if not rec["gt_paths"]:
            raise ManifestError(f"{where}/gt_paths: empty for pair '{rec['pair_id']}'")
        shape_id = rec.get("shape_id", rec["pair_id"].rsplit("_v", 1)[0])
        split_by_shape.setdefault(shape_id, set()).add(rec["split"])
        if check_files and base_dir is not None:
            base = Path(base_dir)
            for rel in [rec["partial_path"], *rec["gt_paths"].values()]:
                if not (base / rel).exists():
                    raise ManifestError(
                        f"{where}: referenced file '{rel}' does not exist "
                        f"(pair_id={rec['pair_id']})")
    for shape_id, splits in split_by_shape.items():
        if len(splits) > 1:
            raise ManifestError(
                f"/records: complete shape '{shape_id}' appears in both splits")


def write_manifest(manifest, path):
    manifest = dict(manifest)
    manifest["hash"] = manifest_hash(manifest)
    validate_manifest(manifest, check_files=False)
    Path(path).write_bytes(
        json.dumps(manifest, sort_keys=True, indent=2).encode("utf-8") + b"\n")
    return manifest["hash"]


def read_manifest(path, check_files=True):
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    validate_manifest(manifest, base_dir=path.parent, check_files=check_files)
    if "hash" in manifest and manifest["hash"] != manifest_hash(manifest):
        raise ManifestError("/hash: stored hash does not match manifest contents")
    return manifest


# --------------------------------------------------------------------------
# Parameter checkpoints: "<name>.idx.json" + "<name>.bin"
# --------------------------------------------------------------------------

def save_checkpoint(registry, name_prefix, meta=None):
    """Write params as a JSON index {path: [shape, byte_offset]} plus an
    little-endian float64 blob; optional meta goes to "<name>.meta.json"."""
    prefix = Path(name_prefix)
    index = {}
    blob = bytearray()
    for path in sorted(registry.paths()):
        data = registry.get(path).data
        index[path] = [list(data.shape), len(blob)]
        blob.extend(struct.pack(f"<{data.size}d", *data.ravel().tolist()))
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.idx.json").write_text(
        json.dumps(index, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    Path(f"{prefix}.bin").write_bytes(bytes(blob))
    if meta is not None:
        Path(f"{prefix}.meta.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(name_prefix):
    """Read back a checkpoint; returns ({path: array}, meta_or_None)."""
    prefix = Path(name_prefix)
    idx_path = Path(f"{prefix}.idx.json")
    bin_path = Path(f"{prefix}.bin")
    if not idx_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {prefix}.idx.json / .bin")
    index = json.loads(idx_path.read_text(encoding="utf-8"))
    blob = bin_path.read_bytes()
    values = {}
    for path, (shape, offset) in index.items():
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        values[path] = arr.reshape(shape).astype(np.float64)
    meta_path = Path(f"{prefix}.meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else None
    return values, meta
