"""Dense n-d tensors with reverse-mode automatic differentiation.

A ``Tape`` records operations in execution order; ``backward`` replays the
node list in strict reverse order and accumulates gradients additively into
each participating tensor's ``grad`` slot. Tensors that were never put on a
tape act as constants and never receive gradients.

Everything is float64 by default; a float32 mode exists for speed
experiments only (``set_dtype``) and is not covered by the gradient checks.
Shapes are matched exactly: the only broadcasts are the dedicated helper ops
(``add_bias``, ``broadcast_rows``), which keeps every backward rule small.
"""

import numpy as np

_DTYPE = np.float64


def set_dtype(dtype):
    """Switch the default storage dtype (np.float64 or np.float32)."""
    global _DTYPE
    if dtype not in (np.float64, np.float32):
        raise ValueError("dtype must be np.float64 or np.float32")
    _DTYPE = dtype


def default_dtype():
    return _DTYPE


class ShapeError(ValueError):
    """Raised when operand shapes do not fit the requested op."""


class TapeError(RuntimeError):
    """Raised on tape misuse (double backward, mixed tapes, bad root)."""


class _Node:
    __slots__ = ("kind", "inputs", "output", "backward")

    def __init__(self, kind, inputs, output, backward):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Append-only operation record; append order is the topological order."""

    def __init__(self):
        self.nodes = []
        self.watched = []
        self.consumed = False

    def watch(self, tensor):
        """Register a leaf tensor so backward fills its grad slot."""
        tensor.tape = self
        tensor.grad = None
        self.watched.append(tensor)
        return tensor


class Tensor:
    __slots__ = ("data", "tape", "grad")

    def __init__(self, data, tape=None):
        arr = np.asarray(data, dtype=_DTYPE)
        # ascontiguousarray would promote 0-d scalars to 1-d
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.tape = None
        self.grad = None
        if tape is not None:
            tape.watch(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, taped={self.tape is not None})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def _tape_of(inputs):
    tape = None
    for t in inputs:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise TapeError("operands live on two different tapes")
    if tape is not None and tape.consumed:
        raise TapeError("tape already consumed by backward; record on a fresh tape")
    return tape


def record(kind, inputs, out_data, backward):
    """Create the result tensor of a (possibly custom) op and tape it.

    ``backward(grad_out) -> tuple`` must return one gradient array (or None)
    per input, aligned with ``inputs``. The node is only recorded when at
    least one input is on a tape, so plain inference carries no tape cost.
    """
    tape = _tape_of(inputs)
    out = Tensor(out_data)
    if tape is not None:
        out.tape = tape
        tape.nodes.append(_Node(kind, tuple(inputs), out, backward))
    return out


def backward(tape, root):
    """Fill grad slots with d(root)/d(tensor) for every tensor on the tape."""
    if not isinstance(root, Tensor) or root.tape is not tape:
        raise TapeError("backward root is not on this tape")
    if root.data.size != 1:
        raise TapeError(f"backward root must be scalar, got shape {root.shape}")
    if tape.consumed:
        raise TapeError("backward already ran on this tape")
    tape.consumed = True
    root.grad = np.ones_like(root.data)
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        grads = node.backward(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not isinstance(inp, Tensor) or inp.tape is None:
                continue
            if inp.grad is None:
                inp.grad = np.array(gi, dtype=inp.data.dtype)
            else:
                inp.grad = inp.grad + gi
    # release the tape binding so the tensors (and their grads) outlive the
    # tape and can be re-watched on a fresh one; the tape itself stays
    # consumed, so replaying it remains an error
    for node in tape.nodes:
        node.output.tape = None
        for inp in node.inputs:
            if isinstance(inp, Tensor):
                inp.tape = None
    for t in tape.watched:
        t.tape = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _check_same_shape(kind, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _binary(kind, a, b, fwd, bwd_a, bwd_b):
    a_const = not isinstance(a, Tensor)
    b_const = not isinstance(b, Tensor)
    at, bt = _as_tensor(a), _as_tensor(b)
    if at.data.shape != () and bt.data.shape != ():
        _check_same_shape(kind, at, bt)
    out = fwd(at.data, bt.data)

    def back(g):
        ga = None if a_const else bwd_a(g, at.data, bt.data, out)
        gb = None if b_const else bwd_b(g, at.data, bt.data, out)
        # a scalar operand collects the reduced gradient
        if ga is not None and at.data.shape == () and g.shape != ():
            ga = np.sum(ga).reshape(())
        if gb is not None and bt.data.shape == () and g.shape != ():
            gb = np.sum(gb).reshape(())
        return ga, gb

    return record(kind, (at, bt), out, back)


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y, lambda g, x, y, o: -g * x / (y * y))


def neg(a):
    return mul(a, -1.0)


def absolute(a):
    a = _as_tensor(a)
    # subgradient at 0 is 0 (np.sign(0) == 0)
    return record("abs", (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return record("exp", (a,), out, lambda g: (g * out,))


def log(a):
    a = _as_tensor(a)
    return record("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def sigmoid(a):
    a = _as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def leaky_relu(a, slope=0.2):
    a = _as_tensor(a)
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)
    return record("leaky_relu", (a,), out,
                  lambda g: (g * np.where(pos, 1.0, slope),))


def clamp(a, lo, hi):
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)
    passthrough = (a.data > lo) & (a.data < hi)
    return record("clamp", (a,), out, lambda g: (g * passthrough,))


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a, axis=None):
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis)

    def back(g):
        if axis is None:
            return (np.full(a.data.shape, g.reshape(())),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return record("sum", (a,), out, back)


def mean(a, axis=None):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / n)


def reduce_max(a, axis=None):
    """Max reduction; ties take the lowest flat index so backward is stable."""
    a = _as_tensor(a)
    if axis is None:
        idx = int(np.argmax(a.data))
        out = a.data.reshape(-1)[idx]

        def back(g):
            ga = np.zeros_like(a.data)
            ga.reshape(-1)[idx] = g.reshape(())
            return (ga,)
    else:
        idx = np.argmax(a.data, axis=axis)
        out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

        def back(g):
            ga = np.zeros_like(a.data)
            np.put_along_axis(ga, np.expand_dims(idx, axis),
                              np.expand_dims(g, axis), axis=axis)
            return (ga,)

    return record("max", (a,), out, back)


# ---------------------------------------------------------------------------
# shape / layout ops


def subslice(a, key):
    """Slice view a[key]; backward scatters into a zero array."""
    a = _as_tensor(a)
    out = a.data[key]

    def back(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return record("slice", (a,), np.ascontiguousarray(out), back)


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    nd = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != nd:
            raise ShapeError(f"concat: rank mismatch {p.data.shape} vs {parts[0].data.shape}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    splits = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return record("concat", tuple(parts), out, back)


def repeat_rows(a, k):
    """Repeat each row of a 2-d tensor k times (row i -> rows i*k..i*k+k-1)."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"repeat_rows: need 2-d input, got {a.data.shape}")
    out = np.repeat(a.data, k, axis=0)
    n, f = a.data.shape
    return record("repeat_rows", (a,), out,
                  lambda g: (g.reshape(n, k, f).sum(axis=1),))


def broadcast_rows(v, n):
    """Tile a 1-d tensor to (n, len(v)); backward sums over rows."""
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise ShapeError(f"broadcast_rows: need 1-d input, got {v.data.shape}")
    out = np.broadcast_to(v.data, (n, v.data.shape[0])).copy()
    return record("broadcast_rows", (v,), out, lambda g: (g.sum(axis=0),))


def add_bias(x, b, axis):
    """Broadcast-add a per-channel 1-d bias along ``axis`` of x."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or x.data.shape[axis] != b.data.shape[0]:
        raise ShapeError(f"add_bias: bias {b.data.shape} does not fit axis {axis} "
                         f"of {x.data.shape}")
    shape = [1] * x.data.ndim
    shape[axis] = b.data.shape[0]
    out = x.data + b.data.reshape(shape)
    other_axes = tuple(i for i in range(x.data.ndim) if i != axis)
    return record("add_bias", (x, b), out,
                  lambda g: (g, g.sum(axis=other_axes)))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data
    return record("matmul", (a, b), out,
                  lambda g: (g @ b.data.T, a.data.T @ g))


def upsample2x(x):
    """Nearest-neighbor 2x spatial upsample of a (C, H, W) tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"upsample2x: need (C,H,W), got {x.data.shape}")
    c, h, w = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return record("upsample2x", (x,), out,
                  lambda g: (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),))


# ---------------------------------------------------------------------------
# 2-d convolution (stride 1 or 2, zero padding)


def _im2col(x, kh, kw, stride, padding):
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols = np.empty((c, kh, kw, ho * wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j, :] = xp[:, i:i + stride * ho:stride,
                                  j:j + stride * wo:stride].reshape(c, ho * wo)
    return cols.reshape(c * kh * kw, ho * wo), ho, wo


def conv2d(x, w, stride=1, padding=0):
    """2-d convolution: x (Cin, H, W) * w (Cout, Cin, kh, kw) -> (Cout, Ho, Wo)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4 or x.data.shape[0] != w.data.shape[1]:
        raise ShapeError(f"conv2d: shape mismatch {x.data.shape} vs {w.data.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    cout, cin, kh, kw = w.data.shape
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    out = (w.data.reshape(cout, cin * kh * kw) @ cols).reshape(cout, ho, wo)

    def back(g):
        gmat = g.reshape(cout, ho * wo)
        gw = (gmat @ cols.T).reshape(cout, cin, kh, kw)
        gcols = w.data.reshape(cout, -1).T @ gmat           # (Cin*kh*kw, Ho*Wo)
        gcols = gcols.reshape(cin, kh, kw, ho, wo)
        c, h, wd = x.data.shape
        gx = np.zeros((c, h + 2 * padding, wd + 2 * padding))
        for i in range(kh):
            for j in range(kw):
                gx[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
        if padding:
            gx = gx[:, padding:-padding, padding:-padding]
        return np.ascontiguousarray(gx), gw

    return record("conv2d", (x, w), out, back)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckReport:
    """Summary of analytic-vs-central-difference agreement at one point."""

    def __init__(self, max_rel_err, flagged, analytic, numeric):
        self.max_rel_err = max_rel_err
        self.flagged = flagged          # flat indices exceeding tol
        self.analytic = analytic
        self.numeric = numeric

    @property
    def ok(self):
        return len(self.flagged) == 0

    def __repr__(self):
        return f"GradCheckReport(max_rel_err={self.max_rel_err:.3e}, flagged={len(self.flagged)})"


def check_gradients(f, point, h=1e-5, tol=1e-3):
    """Compare d(f)/d(point) against central finite differences.

    ``f`` maps a tensor of ``point``'s shape to a scalar tensor. Relative
    error per coordinate is |ga - gn| / (|ga| + |gn| + 1e-6).
    """
    point = np.asarray(point, dtype=np.float64)
    tape = Tape()
    x = Tensor(point.copy(), tape)
    y = f(x)
    if y.data.size != 1:
        raise ShapeError("check_gradients: f must return a scalar tensor")
    if not np.isfinite(y.data).all():
        raise FloatingPointError("check_gradients: f non-finite at the base point")
    backward(tape, y)
    ga = np.zeros_like(point) if x.grad is None else x.grad.copy()

    flat = point.reshape(-1)
    gn = np.zeros(flat.size)
    for i in range(flat.size):
        for sgn in (+1.0, -1.0):
            probe = flat.copy()
            probe[i] += sgn * h
            val = f(Tensor(probe.reshape(point.shape))).item()
            if not np.isfinite(val):
                raise FloatingPointError(f"check_gradients: f non-finite at probe {i}")
            gn[i] += sgn * val
        gn[i] /= 2.0 * h
    gn = gn.reshape(point.shape)

    rel = np.abs(ga - gn) / (np.abs(ga) + np.abs(gn) + 1e-6)
    flagged = np.flatnonzero(rel > tol).tolist()
    return GradCheckReport(float(rel.max()) if rel.size else 0.0, flagged, ga, gn)
