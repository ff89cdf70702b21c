"""Procedural dual-domain scene generator.

Scenes are a ground plane plus axis-aligned boxes seen by a rectified stereo
rig; depth is the exact per-pixel ray-cast solution, so rendered depth equals
the closed-form geometry to float precision. Two appearance profiles share
the geometry: a flat-shaded "synthetic" style and a "real" style with
low-frequency texture, a fine noise field, and a channel gain/bias/gamma
shift. All appearance is a deterministic function of the hit point's world
position, which keeps left/right renders photometrically consistent under
ground-truth warping (occlusions aside).

World frame: x right, y down, z forward, left camera at the origin, right
camera at (+baseline, 0, 0); the camera may pitch about the x axis. The
ground plane sits at y = camera height.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, DepthMap

_SKY = -1


@dataclass(frozen=True)
class Box:
    lo: tuple          # (x, y, z) min corner, meters
    hi: tuple          # (x, y, z) max corner


@dataclass
class Scene:
    seed: int
    camera_height: float
    pitch: float
    baseline: float
    boxes: list
    albedos: np.ndarray          # (n_boxes + 1, 3); row 0 is the ground

    @classmethod
    def generate(cls, seed, baseline=0.54, n_boxes=None):
        """Deterministic random desk-scale street scene."""
        rng = np.random.Generator(np.random.PCG64(seed))
        h = float(rng.uniform(1.3, 1.7))
        pitch = float(rng.uniform(-0.02, 0.05))
        n = int(rng.integers(5, 9)) if n_boxes is None else n_boxes
        boxes = []
        for _ in range(n):
            cx = float(rng.uniform(-14.0, 14.0))
            cz = float(rng.uniform(5.0, 45.0))
            sx = float(rng.uniform(0.8, 5.0))
            sz = float(rng.uniform(0.8, 5.0))
            sy = float(rng.uniform(0.8, 4.5))
            boxes.append(Box((cx - sx / 2, h - sy, cz - sz / 2),
                             (cx + sx / 2, h, cz + sz / 2)))
        # one far wall so the skyline is not all sky
        wx = float(rng.uniform(-6.0, 6.0))
        boxes.append(Box((wx - 18.0, h - float(rng.uniform(4.0, 7.0)), 55.0),
                         (wx + 18.0, h, 60.0)))
        albedos = rng.uniform(0.25, 0.75, size=(len(boxes) + 1, 3))
        albedos[0] = (0.32, 0.36, 0.30)      # ground
        return cls(seed, h, pitch, baseline, boxes, albedos)


@dataclass(frozen=True)
class DomainStyle:
    name: str
    gain: tuple = (1.0, 1.0, 1.0)
    bias: tuple = (0.0, 0.0, 0.0)
    gamma: float = 1.0
    texture_amp: float = 0.0
    texture_freq: float = 24.0    # image-space wavelength target, pixels
    noise_sigma: float = 0.0
    noise_freq: float = 12.0


SYNTHETIC_STYLE = DomainStyle(name="synthetic")
REAL_STYLE = DomainStyle(name="real", gain=(1.08, 1.0, 0.90), bias=(0.04, 0.0, -0.03),
                         gamma=1.18, texture_amp=0.10, noise_sigma=0.02)


# ---------------------------------------------------------------------------
# hash-based value noise (deterministic, world-anchored)


def _hash_u64(ix, iy, iz, salt):
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
         ^ np.uint64(salt * 0x27D4EB2F165667C5 % (1 << 64)))
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return h


def _lattice_uniform(ix, iy, iz, salt):
    """Uniform in [0, 1) at integer lattice coordinates."""
    return _hash_u64(ix, iy, iz, salt).astype(np.float64) * (2.0 ** -64)


def _lattice_gauss(ix, iy, iz, salt):
    """Standard normal at lattice coordinates (Box-Muller on two hashes)."""
    u1 = np.maximum(_lattice_uniform(ix, iy, iz, salt), 1e-12)
    u2 = _lattice_uniform(ix, iy, iz, salt + 101)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def value_noise(q, salt, gaussian=False):
    """Trilinear value noise over a hashed lattice at coordinates q (N, 3)."""
    base = np.floor(q)
    frac = q - base
    frac = frac * frac * (3.0 - 2.0 * frac)    # smoothstep for continuous slope
    ib = base.astype(np.int64)
    sample = _lattice_gauss if gaussian else _lattice_uniform
    out = np.zeros(len(q))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wgt = ((frac[:, 0] if dx else 1 - frac[:, 0])
                       * (frac[:, 1] if dy else 1 - frac[:, 1])
                       * (frac[:, 2] if dz else 1 - frac[:, 2]))
                out += wgt * sample(ib[:, 0] + dx, ib[:, 1] + dy, ib[:, 2] + dz, salt)
    if not gaussian:
        out = 2.0 * out - 1.0
    return out


def _ray_grid(cam, pitch):
    """World-space ray directions parameterized so depth equals the ray t."""
    us, vs = np.meshgrid(np.arange(cam.width, dtype=np.float64),
                         np.arange(cam.height, dtype=np.float64))
    d = np.stack([(us - cam.o_x) / cam.f, (vs - cam.o_y) / cam.f,
                  np.ones_like(us)], axis=-1).reshape(-1, 3)
    c, s = np.cos(pitch), np.sin(pitch)
    rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    return d @ rot.T


def render(scene, style, cam, rig_side="mono", d_max=80.0):
    """Ray-cast one view and shade it with the given style.

    Returns (image (H, W, 3) float64 in [0, 1], DepthMap). The same
    (scene, style, side) always produces bit-identical output.
    """
    if rig_side not in ("mono", "left", "right"):
        raise ValueError(f"unknown rig side {rig_side!r}")
    origin = np.array([scene.baseline if rig_side == "right" else 0.0, 0.0, 0.0])
    dirs = _ray_grid(cam, scene.pitch)
    n = len(dirs)
    t_hit = np.full(n, d_max)
    obj = np.full(n, _SKY, dtype=np.int64)
    axis = np.zeros(n, dtype=np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        tg = (scene.camera_height - origin[1]) / dirs[:, 1]
        ok = (dirs[:, 1] > 0) & (tg > 0) & (tg < t_hit)
        t_hit[ok] = tg[ok]
        obj[ok] = 0
        axis[ok] = 1
        for bi, box in enumerate(scene.boxes):
            lo = (np.asarray(box.lo) - origin) / dirs
            hi = (np.asarray(box.hi) - origin) / dirs
            tn = np.minimum(lo, hi)
            tf = np.maximum(lo, hi)
            near = np.nanmax(tn, axis=1)
            far = np.nanmin(tf, axis=1)
            enter_axis = np.nanargmax(tn, axis=1)
            ok = (near <= far) & (near > 1e-6) & (near < t_hit)
            t_hit[ok] = near[ok]
            obj[ok] = bi + 1
            axis[ok] = enter_axis[ok]

    depth = np.clip(t_hit, None, d_max).reshape(cam.height, cam.width)

    hit = obj >= 0
    img = np.empty((n, 3))
    # sky: vertical gradient only, so a horizontal warp leaves it unchanged
    img[~hit] = np.array([0.55, 0.60, 0.70]) + np.outer(dirs[~hit, 1], [0.12, 0.10, 0.06])
    face = np.choose(axis[hit], [0.72, 1.0, 0.85])
    img[hit] = scene.albedos[obj[hit]] * face[:, None]

    if hit.any() and (style.texture_amp > 0 or style.noise_sigma > 0):
        p = origin + t_hit[hit, None] * dirs[hit]
        z = np.maximum(p[:, 2], 0.5)
        # perspective-normalized world coordinates: constant image-space
        # frequency at every depth, identical for both rig cameras
        def q(freq):
            c = cam.f / freq
            return np.stack([c * p[:, 0] / z, c * p[:, 1] / z,
                             4.0 * np.log(z)], axis=1)
        if style.texture_amp > 0:
            tex = value_noise(q(style.texture_freq), salt=scene.seed * 7 + 1)
            img[hit] *= (1.0 + style.texture_amp * tex)[:, None]
        if style.noise_sigma > 0:
            noise = value_noise(q(style.noise_freq), salt=scene.seed * 7 + 2, gaussian=True)
            img[hit] += (style.noise_sigma * noise)[:, None]

    img = img * np.asarray(style.gain) + np.asarray(style.bias)
    img = np.clip(img, 0.0, 1.0) ** style.gamma
    return np.clip(img, 0.0, 1.0).reshape(cam.height, cam.width, 3), DepthMap(depth)


def stylize(content, style_ref):
    """Per-channel statistics transfer: match the reference's mean and std.

    out_c = std(ref_c) * (content_c - mean(content_c)) / std(content_c)
            + mean(ref_c), clamped to [0, 1]; a zero-variance content channel
    falls back to the pure mean shift.
    """
    content = np.asarray(content, dtype=np.float64)
    style_ref = np.asarray(style_ref, dtype=np.float64)
    if content.ndim != 3 or style_ref.ndim != 3 or content.shape[2] != style_ref.shape[2]:
        raise ValueError(f"stylize: channel mismatch {content.shape} vs {style_ref.shape}")
    out = np.empty_like(content)
    for c in range(content.shape[2]):
        mu_c, sd_c = content[..., c].mean(), content[..., c].std()
        mu_s, sd_s = style_ref[..., c].mean(), style_ref[..., c].std()
        if sd_c < 1e-12:
            out[..., c] = content[..., c] - mu_c + mu_s
        else:
            out[..., c] = sd_s * (content[..., c] - mu_c) / sd_c + mu_s
    return np.clip(out, 0.0, 1.0)


def stereo_consistency_residual(left_img, right_img, left_depth, right_depth,
                                baseline, f):
    """Mean L1 between the left image and the GT-warped right image,
    restricted to unoccluded, depth-smooth, in-bounds pixels.

    Returns (mean_l1, mask). Used as the rendering oracle: a consistent
    left/right pair reconstructs to well under 1e-3 on that support.
    """
    h, w = left_depth.shape
    disp = baseline * f / left_depth
    us = np.arange(w, dtype=np.float64)[None, :] - disp
    inb = (us >= 1.0) & (us <= w - 2.0)
    u0 = np.clip(np.floor(us).astype(np.int64), 0, w - 2)
    frac = np.clip(us, 0, w - 1) - u0
    rows = np.arange(h)[:, None]
    d_r = (1 - frac) * right_depth[rows, u0] + frac * right_depth[rows, u0 + 1]
    unocc = np.abs(d_r - left_depth) / left_depth < 0.01
    # exclude depth discontinuities: bilinear is only trusted on smooth surfaces
    smooth = np.ones((h, w), dtype=bool)
    lap = np.abs(np.diff(left_depth, n=2, axis=1)) < 0.2
    smooth[:, 1:-1] &= lap
    lapr = np.abs(np.diff(right_depth, n=2, axis=1)) < 0.2
    smooth_r = np.ones((h, w), dtype=bool)
    smooth_r[:, 1:-1] &= lapr
    d_smooth_r = np.ones((h, w), dtype=bool)
    d_smooth_r &= smooth_r[rows, u0] & smooth_r[rows, np.minimum(u0 + 1, w - 1)]
    lap_v = np.abs(np.diff(left_depth, n=2, axis=0)) < 0.2
    smooth[1:-1, :] &= lap_v
    mask = inb & unocc & smooth & d_smooth_r
    warped = ((1 - frac)[..., None] * right_img[rows, u0]
              + frac[..., None] * right_img[rows, u0 + 1])
    if not mask.any():
        return 0.0, mask
    return float(np.abs(left_img - warped)[mask].mean()), mask


@dataclass
class SampleRecord:
    role: str          # source | target-train | target-eval
    side: str          # mono | left | right
    image: np.ndarray
    depth: np.ndarray | None
    scene_seed: int


def make_dataset(cfg, seed):
    """Render the source / target-train / target-eval splits in memory.

    Source scenes are synthetic-style mono views with depth; target scenes
    are real-style (left + right in stereo mode); eval scenes are real-style
    with held-out ground truth. Scene seeds are disjoint across splits.
    """
    cam = cfg.camera()
    stereo = cfg.mode == "stereo"
    groups = {"source": cfg.n_source, "target": cfg.n_target, "eval": cfg.n_eval}
    seeds = {g: [seed_for_scene(seed, g, i) for i in range(n)] for g, n in groups.items()}
    all_seeds = [s for group in seeds.values() for s in group]
    if len(set(all_seeds)) != len(all_seeds):
        raise ValueError("overlapping scene seed ranges between splits")

    records = []
    for i, s in enumerate(seeds["source"]):
        scene = Scene.generate(s, baseline=cfg.baseline)
        img, dm = render(scene, SYNTHETIC_STYLE, cam, "mono", d_max=cfg.d_max)
        records.append(SampleRecord("source", "mono", img, dm.depth, s))
    for i, s in enumerate(seeds["target"]):
        scene = Scene.generate(s, baseline=cfg.baseline)
        img, _ = render(scene, REAL_STYLE, cam, "left", d_max=cfg.d_max)
        records.append(SampleRecord("target-train", "left", img, None, s))
        if stereo:
            img_r, _ = render(scene, REAL_STYLE, cam, "right", d_max=cfg.d_max)
            records.append(SampleRecord("target-train", "right", img_r, None, s))
    for i, s in enumerate(seeds["eval"]):
        scene = Scene.generate(s, baseline=cfg.baseline)
        img, dm = render(scene, REAL_STYLE, cam, "left", d_max=cfg.d_max)
        records.append(SampleRecord("target-eval", "left", img, dm.depth, s))
    return records


def seed_for_scene(root_seed, group, index):
    from .config import derive_seed
    return derive_seed(root_seed, "scene", group, index)
