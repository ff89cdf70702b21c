"""Pinhole camera model, 2D<->3D projections, subsampling, warping, SSIM.

Conventions: depth maps are (H, W) float64 arrays in meters, images are
(C, H, W) float64 in [0, 1], pixel (u, v) means column u / row v, point
clouds are (N, 3) arrays of camera-space (x, y, z).

Projection applies a configurable affine depth transform first,
d* = depth_scale * d + epsilon, and 3D->2D inverts it; the defaults encode
normalized depth (scale 1/80) with a shift of 40 so x/y coordinates stay at
a reasonable magnitude relative to z.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class CameraModel:
    f: float = 725.0
    o_x: float = 96.0
    o_y: float = 32.0
    epsilon: float = 40.0
    depth_scale: float = 1.0 / 80.0
    width: int = 192
    height: int = 64

    def __post_init__(self):
        if self.f <= 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if not (0 <= self.o_x < self.width and 0 <= self.o_y < self.height):
            raise ValueError("principal point outside the image plane")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")


@dataclass
class DepthMap:
    depth: np.ndarray                      # (H, W) meters
    valid: np.ndarray | None = None        # optional (H, W) 0/1

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 2:
            raise ValueError(f"depth must be (H, W), got {self.depth.shape}")
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=np.uint8)
            if self.valid.shape != self.depth.shape:
                raise ValueError("valid mask shape mismatch")

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]


class PixelMask:
    """Binary (H, W) mask supporting &, |, ~ and popcount."""

    def __init__(self, bits):
        bits = np.asarray(bits)
        if bits.ndim != 2:
            raise ValueError(f"mask must be (H, W), got {bits.shape}")
        self.bits = (bits != 0).astype(np.uint8)

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    def popcount(self):
        return int(self.bits.sum())

    def __and__(self, other):
        return PixelMask(self.bits & other.bits)

    def __or__(self, other):
        return PixelMask(self.bits | other.bits)

    def __invert__(self):
        return PixelMask(1 - self.bits)

    def __eq__(self, other):
        return isinstance(other, PixelMask) and np.array_equal(self.bits, other.bits)

    @classmethod
    def full(cls, height, width):
        return cls(np.ones((height, width), dtype=np.uint8))

    @classmethod
    def empty(cls, height, width):
        return cls(np.zeros((height, width), dtype=np.uint8))


@dataclass
class PointCloud:
    points: np.ndarray                     # (N, 3) camera-space x, y, z
    provenance: np.ndarray | None = None   # optional (N, 2) source pixel (u, v)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.provenance is not None:
            self.provenance = np.asarray(self.provenance, dtype=np.int64).reshape(-1, 2)
            if len(self.provenance) != len(self.points):
                raise ValueError("provenance length mismatch")

    def __len__(self):
        return len(self.points)


def round_half_away(x):
    """Round halves away from zero (platform-stable, unlike banker's rounding)."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def project_2d_to_3d(depth, mask, cam):
    """Lift masked pixels to camera space, one point per set mask bit.

    x = d*(u - o_x)/f, y = d*(v - o_y)/f, z = d* with
    d* = depth_scale * d + epsilon. Provenance records the source (u, v).
    """
    d = depth.depth if isinstance(depth, DepthMap) else np.asarray(depth, dtype=np.float64)
    if mask.bits.shape != d.shape:
        raise ValueError(f"mask shape {mask.bits.shape} does not match depth {d.shape}")
    vs, us = np.nonzero(mask.bits)
    dm = d[vs, us]
    if len(dm) and (not np.isfinite(dm).all() or (dm <= 0).any()):
        raise ValueError("masked pixel with non-finite or non-positive depth")
    dstar = cam.depth_scale * dm + cam.epsilon
    pts = np.stack([dstar * (us - cam.o_x) / cam.f,
                    dstar * (vs - cam.o_y) / cam.f,
                    dstar], axis=1) if len(dm) else np.zeros((0, 3))
    prov = np.stack([us, vs], axis=1) if len(dm) else np.zeros((0, 2), dtype=np.int64)
    return PointCloud(pts, prov)


def project_3d_to_2d(cloud, cam):
    """Project a cloud back to the image plane.

    Pixel coordinates are rounded half-away-from-zero; points whose
    unshifted depth is non-positive or whose pixel falls off the plane are
    dropped; duplicated pixels keep the minimum depth. Returns
    (DepthMap, PixelMask, dropped_count).
    """
    p = cloud.points
    h, w = cam.height, cam.width
    grid = np.full((h, w), np.inf)
    dropped = len(p)
    if len(p):
        z = p[:, 2]
        emit = z - cam.epsilon > 0
        u = np.zeros(len(p))
        v = np.zeros(len(p))
        u[emit] = round_half_away(p[emit, 0] * cam.f / z[emit] + cam.o_x)
        v[emit] = round_half_away(p[emit, 1] * cam.f / z[emit] + cam.o_y)
        keep = emit & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
        dropped = int(len(p) - keep.sum())
        d_emit = (z[keep] - cam.epsilon) / cam.depth_scale
        np.minimum.at(grid, (v[keep].astype(np.int64), u[keep].astype(np.int64)), d_emit)
    hit = np.isfinite(grid)
    depth = np.where(hit, grid, 0.0)
    return DepthMap(depth), PixelMask(hit), dropped


def uniform_subsample(cloud, ratio, seed):
    """Seeded uniform draw of ceil(ratio * N) points without replacement.

    The selection is sorted so the original cloud order is preserved;
    identical (cloud, seed) always yields the identical subset.
    """
    if len(cloud) == 0:
        raise ValueError("cannot subsample an empty cloud")
    if not (0 < ratio <= 1):
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    n = len(cloud)
    if ratio == 1:
        return PointCloud(cloud.points.copy(),
                          None if cloud.provenance is None else cloud.provenance.copy())
    k = int(np.ceil(ratio * n - 1e-9))      # guard float fuzz like 0.1*30 -> 3.0000000004
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = np.sort(rng.choice(n, size=k, replace=False))
    prov = None if cloud.provenance is None else cloud.provenance[idx]
    return PointCloud(cloud.points[idx], prov)


def disparity_from_depth(depth, baseline, f):
    """Per-pixel stereo disparity a = baseline * f / depth (pixels).

    Accepts a Tensor (differentiable) or a DepthMap/array.
    """
    if isinstance(depth, T.Tensor):
        if depth.data.min() <= 0:
            raise ValueError("disparity needs strictly positive depth")
        return T.div(float(baseline * f), depth)
    d = depth.depth if isinstance(depth, DepthMap) else np.asarray(depth, dtype=np.float64)
    if d.min() <= 0:
        raise ValueError("disparity needs strictly positive depth")
    return baseline * f / d


def warp_horizontal(image, disparity):
    """Bilinear horizontal warp: out(c, v, u) = image(c, v, u - a(v, u)).

    Sample coordinates are clamped to the border columns; the warp is
    differentiable w.r.t. both the image values and the disparity (with zero
    gradient into clamped samples).
    """
    img = image if isinstance(image, T.Tensor) else T.Tensor(np.asarray(image, dtype=np.float64))
    disp = disparity if isinstance(disparity, T.Tensor) else T.Tensor(np.asarray(disparity))
    if img.data.ndim != 3 or disp.data.shape != img.data.shape[1:]:
        raise T.ShapeError(f"warp_horizontal: image {img.data.shape} vs "
                           f"disparity {disp.data.shape}")
    c, h, w = img.data.shape
    u = np.arange(w, dtype=np.float64)[None, :]
    src = u - disp.data
    inside = (src > 0.0) & (src < w - 1.0)   # clamped samples get zero disparity grad
    s = np.clip(src, 0.0, w - 1.0)
    i0 = np.floor(s).astype(np.int64)
    i0 = np.minimum(i0, w - 2) if w > 1 else i0
    i1 = np.minimum(i0 + 1, w - 1)
    frac = s - i0
    rows = np.arange(h)[:, None]
    left = img.data[:, rows, i0]
    right = img.data[:, rows, i1]
    out = (1.0 - frac) * left + frac * right

    def back(g):
        gi = np.zeros_like(img.data)
        ch = np.arange(c)[:, None, None]
        np.add.at(gi, (ch, rows[None], i0[None]), g * (1.0 - frac))
        np.add.at(gi, (ch, rows[None], i1[None]), g * frac)
        # ds/da = -1 where not clamped
        gd = -(g * (right - left)).sum(axis=0) * inside
        return gi, gd

    return T.record("warp_horizontal", (img, disp), out, back)


_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def ssim(a, b):
    """Per-pixel SSIM map with 3x3 box-filter local statistics.

    Statistics use zero padding; the map is averaged over channels.
    Constants C1 = 0.01^2, C2 = 0.03^2 assume intensities in [0, 1].
    """
    at = a if isinstance(a, T.Tensor) else T.Tensor(np.asarray(a, dtype=np.float64))
    bt = b if isinstance(b, T.Tensor) else T.Tensor(np.asarray(b, dtype=np.float64))
    if at.data.shape != bt.data.shape or at.data.ndim != 3:
        raise T.ShapeError(f"ssim: shape mismatch {at.data.shape} vs {bt.data.shape}")
    c = at.data.shape[0]
    box = np.full((1, 1, 3, 3), 1.0 / 9.0)

    def blur(x):
        return T.conv2d(x, box, stride=1, padding=1)

    acc = None
    for ch in range(c):
        x = T.subslice(at, (slice(ch, ch + 1),))
        y = T.subslice(bt, (slice(ch, ch + 1),))
        mu_x = blur(x)
        mu_y = blur(y)
        sig_x = T.sub(blur(T.mul(x, x)), T.mul(mu_x, mu_x))
        sig_y = T.sub(blur(T.mul(y, y)), T.mul(mu_y, mu_y))
        sig_xy = T.sub(blur(T.mul(x, y)), T.mul(mu_x, mu_y))
        num = T.mul(T.add(T.mul(T.mul(mu_x, mu_y), 2.0), _SSIM_C1),
                    T.add(T.mul(sig_xy, 2.0), _SSIM_C2))
        den = T.mul(T.add(T.add(T.mul(mu_x, mu_x), T.mul(mu_y, mu_y)), _SSIM_C1),
                    T.add(T.add(sig_x, sig_y), _SSIM_C2))
        m = T.div(num, den)
        acc = m if acc is None else T.add(acc, m)
    acc = T.mul(acc, 1.0 / c)
    return T.subslice(acc, (0,))            # (H, W) map
