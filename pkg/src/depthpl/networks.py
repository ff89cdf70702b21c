"""The two learned components: a small encoder-decoder depth predictor and a
point-cloud completion model (shared point-wise MLP encoder with a global max
pool, plus a folding-style decoder that grows k offspring per input point).

Parameters live in an ordered name -> Tensor dict so checkpoints are a flat,
bit-exact tensor store (see save_checkpoint / load_checkpoint).
"""

import struct

import numpy as np

from . import tensor as T
from .geometry import PointCloud

from .config import derive_seed as _seed_from

CHECKPOINT_MAGIC = b"DPLT"
CHECKPOINT_VERSION = 1


def init_parameters(shapes, seed):
    """Fan-in-scaled uniform init, deterministic per seed.

    ``shapes`` maps name -> (shape, fan_in); fan_in 0 zero-initializes
    (biases, and layers that should start as the identity).
    """
    params = {}
    for i, (name, (shape, fan_in)) in enumerate(shapes.items()):
        if fan_in == 0:
            params[name] = T.Tensor(np.zeros(shape))
        else:
            rng = np.random.Generator(np.random.PCG64(_seed_from(seed, "init", i, name)))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = T.Tensor(rng.uniform(-bound, bound, size=shape))
    return params


class DepthNet:
    """Four-level strided-conv encoder with a nearest-upsample skip decoder.

    The output depth is d_min + (d_max - d_min) * sigmoid(logits) per pixel,
    so predictions always stay strictly inside (d_min, d_max).
    """

    LEVELS = 4

    def __init__(self, d_min=1.0, d_max=80.0, in_channels=3,
                 channels=(16, 32, 64, 128), seed=0):
        if d_min <= 0 or d_max <= d_min:
            raise ValueError("need 0 < d_min < d_max")
        self.d_min = float(d_min)
        self.d_max = float(d_max)
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.slope = 0.2
        c = [in_channels] + list(channels)
        shapes = {}
        for i in range(4):
            shapes[f"enc{i}.w"] = ((c[i + 1], c[i], 3, 3), c[i] * 9)
            shapes[f"enc{i}.b"] = ((c[i + 1],), 0)
        dec_in = [c[4] + c[3], c[3] + c[2], c[2] + c[1]]
        dec_out = [c[3], c[2], c[1]]
        for i in range(3):
            shapes[f"dec{i}.w"] = ((dec_out[i], dec_in[i], 3, 3), dec_in[i] * 9)
            shapes[f"dec{i}.b"] = ((dec_out[i],), 0)
        shapes["dec3.w"] = ((c[1], c[1], 3, 3), c[1] * 9)
        shapes["dec3.b"] = ((c[1],), 0)
        shapes["head.w"] = ((1, c[1], 3, 3), c[1] * 9)
        shapes["head.b"] = ((1,), 0)
        self.params = init_parameters(shapes, seed)

    def watch(self, tape):
        for p in self.params.values():
            tape.watch(p)

    def _conv(self, x, name, stride):
        y = T.conv2d(x, self.params[f"{name}.w"], stride=stride, padding=1)
        return T.add_bias(y, self.params[f"{name}.b"], axis=0)

    def forward(self, image):
        """image (C, H, W) array or Tensor -> depth Tensor (H, W)."""
        x = image if isinstance(image, T.Tensor) else T.Tensor(np.asarray(image, dtype=np.float64))
        c, h, w = x.data.shape
        div = 2 ** self.LEVELS
        if h % div or w % div:
            raise ValueError(f"spatial dims must be divisible by {div}, got {h}x{w}")
        act = lambda z: T.leaky_relu(z, self.slope)
        e0 = act(self._conv(x, "enc0", 2))
        e1 = act(self._conv(e0, "enc1", 2))
        e2 = act(self._conv(e1, "enc2", 2))
        e3 = act(self._conv(e2, "enc3", 2))
        d0 = act(self._conv(T.concat([T.upsample2x(e3), e2]), "dec0", 1))
        d1 = act(self._conv(T.concat([T.upsample2x(d0), e1]), "dec1", 1))
        d2 = act(self._conv(T.concat([T.upsample2x(d1), e0]), "dec2", 1))
        d3 = act(self._conv(T.upsample2x(d2), "dec3", 1))
        logits = self._conv(d3, "head", 1)
        depth = T.add(T.mul(T.sigmoid(logits), self.d_max - self.d_min), self.d_min)
        return T.subslice(depth, (0,))

    def predict(self, image):
        """Inference: returns a plain (H, W) depth array."""
        return self.forward(image).data


class CompletionNet:
    """Point-cloud densifier: k offspring per input point.

    Encoder: shared per-point MLP (3 -> hidden -> feature_dim) followed by a
    global max pool. Decoder: for every input point and every cell of a 2-d
    lattice code, an MLP maps (global feature, point, lattice cell) to an
    offset added to the point, so a zero-initialized output layer reproduces
    each input point k times.
    """

    def __init__(self, k=4, feature_dim=256, hidden=128, seed=0, center_inputs=False):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.center_inputs = center_inputs
        self.slope = 0.2
        dec_in = feature_dim + 3 + 2
        shapes = {
            "enc0.w": ((3, hidden), 3), "enc0.b": ((hidden,), 0),
            "enc1.w": ((hidden, feature_dim), hidden), "enc1.b": ((feature_dim,), 0),
            "dec0.w": ((dec_in, hidden), dec_in), "dec0.b": ((hidden,), 0),
            "dec1.w": ((hidden, 64), hidden), "dec1.b": ((64,), 0),
            "dec2.w": ((64, 3), 0), "dec2.b": ((3,), 0),   # zero: start at identity
        }
        self.params = init_parameters(shapes, seed)
        self.grid = self._lattice(self.k)

    @staticmethod
    def _lattice(k):
        """k code points on an r x c unit-square lattice (r = largest factor <= sqrt k)."""
        r = int(np.sqrt(k))
        while k % r:
            r -= 1
        c = k // r
        gy = np.linspace(0.0, 1.0, r) if r > 1 else np.array([0.0])
        gx = np.linspace(0.0, 1.0, c) if c > 1 else np.array([0.0])
        yy, xx = np.meshgrid(gy, gx, indexing="ij")
        return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)

    def watch(self, tape):
        for p in self.params.values():
            tape.watch(p)

    def _dense(self, x, name, activate=True):
        y = T.add_bias(T.matmul(x, self.params[f"{name}.w"]), self.params[f"{name}.b"], axis=1)
        return T.leaky_relu(y, self.slope) if activate else y

    def forward(self, points):
        """points (N, 3) array -> dense Tensor (N * k, 3)."""
        pts = np.asarray(points.points if isinstance(points, PointCloud) else points,
                         dtype=np.float64)
        if len(pts) == 0:
            raise ValueError("completion input cloud is empty")
        offset = pts.mean(axis=0) if self.center_inputs else np.zeros(3)
        local = T.Tensor(pts - offset)
        feat = self._dense(self._dense(local, "enc0"), "enc1", activate=False)
        g = T.reduce_max(feat, axis=0)                         # (feature_dim,)
        n = len(pts)
        rows = T.repeat_rows(local, self.k)                    # (N*k, 3)
        codes = T.Tensor(np.tile(self.grid, (n, 1)))           # (N*k, 2)
        gtile = T.broadcast_rows(g, n * self.k)
        z = T.concat([gtile, rows, codes], axis=1)
        off = self._dense(self._dense(self._dense(z, "dec0"), "dec1"), "dec2", activate=False)
        out = T.add(rows, off)
        if self.center_inputs:
            out = T.add(out, offset[None, :] * np.ones((n * self.k, 1)))
        return out

    def complete(self, cloud):
        """Inference wrapper: PointCloud in, PointCloud (k x as many points) out."""
        out = self.forward(cloud).data
        if not np.isfinite(out).all():
            raise FloatingPointError("completion produced non-finite points")
        return PointCloud(out)


class IdentityCompleter:
    """Stand-in completion model that returns its input cloud unchanged."""

    k = 1

    def complete(self, cloud):
        return PointCloud(cloud.points.copy(),
                          None if cloud.provenance is None else cloud.provenance.copy())


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, then per tensor
# (u32 name length, name, u32 rank, u64 extents, raw little-endian float64)


def save_checkpoint(path, params):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name in sorted(params):
            data = params[name].data if isinstance(params[name], T.Tensor) else params[name]
            data = np.ascontiguousarray(data, dtype=np.float64)
            enc = name.encode()
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into a name -> ndarray dict (bit-exact)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, pos); pos += 4
        name = blob[pos:pos + nlen].decode(); pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos); pos += 4
        shape = struct.unpack_from(f"<{rank}Q", blob, pos); pos += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape)
        pos += 8 * n
        out[name] = arr.astype(np.float64)
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes after last tensor")
    return out


def assign_parameters(net, loaded):
    """Copy a loaded tensor dict into a network, validating names and shapes."""
    if set(loaded) != set(net.params):
        missing = set(net.params) - set(loaded)
        extra = set(loaded) - set(net.params)
        raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, arr in loaded.items():
        if arr.shape != net.params[name].data.shape:
            raise ValueError(f"checkpoint tensor {name}: shape {arr.shape} != "
                             f"{net.params[name].data.shape}")
        net.params[name] = T.Tensor(arr)
    return net
