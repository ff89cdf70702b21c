"""Bit-exact file formats: PFM depth maps, PGM masks, PPM images, ASCII PLY
point clouds, and the JSON dataset manifest.

Readers are strict: headers must match the writer's canonical form byte for
byte and payload sizes must be exact, so any single-byte corruption of a
valid header is rejected with a FormatError rather than misread.
"""

import json
import os

import numpy as np

from .geometry import DepthMap, PixelMask, PointCloud, round_half_away

MANIFEST_SCHEMA_VERSION = 1
_ROLES = ("source", "target-train", "target-eval")
_SIDES = ("mono", "left", "right")


class FormatError(ValueError):
    """Raised for any malformed or truncated file."""


def _read_line(blob, pos, path):
    end = blob.find(b"\n", pos)
    if end < 0:
        raise FormatError(f"{path}: truncated header (missing newline)")
    return blob[pos:end], end + 1


def _parse_dims(line, path):
    parts = line.split(b" ")
    if len(parts) != 2:
        raise FormatError(f"{path}: dimension line must be '<width> <height>'")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise FormatError(f"{path}: non-integer dimensions {line!r}") from None
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: non-positive dimensions {w}x{h}")
    return w, h


# ---------------------------------------------------------------------------
# PFM (grayscale, little-endian, rows bottom-to-top, float32 on disk)


def write_pfm(path, depth):
    d = depth.depth if isinstance(depth, DepthMap) else np.asarray(depth)
    if d.ndim != 2:
        raise FormatError(f"{path}: PFM writer needs a 2-d map, got {d.shape}")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode())
        fh.write(np.flipud(d).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, pos = _read_line(blob, 0, path)
    if magic == b"PF":
        raise FormatError(f"{path}: color PFM unsupported")
    if magic != b"Pf":
        raise FormatError(f"{path}: bad PFM magic {magic!r}")
    dims, pos = _read_line(blob, pos, path)
    w, h = _parse_dims(dims, path)
    scale_line, pos = _read_line(blob, pos, path)
    if scale_line != b"-1.0":
        try:
            scale = float(scale_line)
        except ValueError:
            raise FormatError(f"{path}: unreadable PFM scale {scale_line!r}") from None
        if scale > 0:
            raise FormatError(f"{path}: big-endian (positive scale) PFM unsupported")
        raise FormatError(f"{path}: unsupported PFM scale {scale_line!r} (writer emits -1.0)")
    expect = w * h * 4
    payload = blob[pos:]
    if len(payload) != expect:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return np.flipud(data).astype(np.float64)


# ---------------------------------------------------------------------------
# binary PNM: P5 masks (values 0/255 only) and P6 images (maxval 255)


def _read_pnm(path, magic_want, channels):
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, pos = _read_line(blob, 0, path)
    if magic in (b"P2", b"P3"):
        raise FormatError(f"{path}: ASCII PNM unsupported")
    if magic != magic_want:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {magic_want.decode()}")
    dims, pos = _read_line(blob, pos, path)
    w, h = _parse_dims(dims, path)
    maxval, pos = _read_line(blob, pos, path)
    if maxval != b"255":
        raise FormatError(f"{path}: maxval must be 255, got {maxval!r}")
    expect = w * h * channels
    payload = blob[pos:]
    if len(payload) != expect:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    return np.frombuffer(payload, dtype=np.uint8).reshape((h, w, channels) if channels > 1
                                                          else (h, w))


def write_pgm_mask(path, mask):
    bits = mask.bits if isinstance(mask, PixelMask) else np.asarray(mask)
    h, w = bits.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(((bits != 0) * np.uint8(255)).tobytes())


def read_pgm_mask(path):
    raw = _read_pnm(path, b"P5", 1)
    bad = ~np.isin(raw, (0, 255))
    if bad.any():
        raise FormatError(f"{path}: mask bytes must be 0 or 255, found {raw[bad][0]}")
    return PixelMask(raw == 255)


def write_ppm(path, image):
    """Write an (H, W, 3) float image in [0, 1]; quantizes half away from zero."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"{path}: PPM writer needs (H, W, 3), got {img.shape}")
    q = np.clip(round_half_away(img * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(q.tobytes())


def read_ppm(path):
    return _read_pnm(path, b"P6", 3).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# ASCII PLY point clouds


_PLY_PROPS = (b"property float x", b"property float y", b"property float z")


def write_ply(path, cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    if not np.isfinite(pts).all():
        raise FormatError(f"{path}: refusing to write non-finite points")
    lines = [b"ply", b"format ascii 1.0", f"element vertex {len(pts)}".encode(),
             *_PLY_PROPS, b"end_header"]
    body = [f"{x:.9g} {y:.9g} {z:.9g}".encode() for x, y, z in pts]
    with open(path, "wb") as fh:
        fh.write(b"\n".join(lines + body))
        fh.write(b"\n")


def read_ply(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0
    expect_header = [b"ply", b"format ascii 1.0", None, *_PLY_PROPS, b"end_header"]
    count = None
    for want in expect_header:
        line, pos = _read_line(blob, pos, path)
        if want is None:
            if not line.startswith(b"element vertex "):
                raise FormatError(f"{path}: expected 'element vertex N', got {line!r}")
            try:
                count = int(line[len(b"element vertex "):])
            except ValueError:
                raise FormatError(f"{path}: bad vertex count in {line!r}") from None
            if count < 0:
                raise FormatError(f"{path}: negative vertex count")
        elif line != want:
            raise FormatError(f"{path}: malformed header line {line!r}, expected {want!r}")
    body = blob[pos:]
    rows = body.split(b"\n")
    if rows and rows[-1] == b"":
        rows = rows[:-1]
    if len(rows) != count:
        raise FormatError(f"{path}: header promises {count} vertices, body has {len(rows)}")
    pts = np.zeros((count, 3))
    for i, row in enumerate(rows):
        parts = row.split(b" ")
        if len(parts) != 3:
            raise FormatError(f"{path}: vertex line {i} must have 3 fields, got {row!r}")
        try:
            pts[i] = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"{path}: unparseable vertex line {i}: {row!r}") from None
    return PointCloud(pts)


# ---------------------------------------------------------------------------
# dataset manifest


def write_manifest(path, records, schema_version=MANIFEST_SCHEMA_VERSION):
    """records: list of dicts with role/side/image/depth/scene_seed."""
    doc = {"schema_version": schema_version, "samples": records}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path):
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported manifest schema {doc.get('schema_version')}")
    samples = doc.get("samples")
    if not isinstance(samples, list):
        raise FormatError(f"{path}: manifest has no sample list")
    train_seeds, eval_seeds = set(), set()
    for i, rec in enumerate(samples):
        for key in ("role", "side", "image", "scene_seed"):
            if key not in rec:
                raise FormatError(f"{path}: sample {i} missing field {key!r}")
        if rec["role"] not in _ROLES:
            raise FormatError(f"{path}: sample {i} has unknown role {rec['role']!r}")
        if rec["side"] not in _SIDES:
            raise FormatError(f"{path}: sample {i} has unknown side {rec['side']!r}")
        for key in ("image", "depth"):
            rel = rec.get(key)
            if rel is not None and not os.path.exists(os.path.join(base, rel)):
                raise FormatError(f"{path}: sample {i} references missing file {rel}")
        if rec["role"] == "target-eval":
            eval_seeds.add(rec["scene_seed"])
        else:
            train_seeds.add(rec["scene_seed"])
    clash = train_seeds & eval_seeds
    if clash:
        raise FormatError(f"{path}: eval scene seeds overlap training scenes: {sorted(clash)[:3]}")
    return samples
