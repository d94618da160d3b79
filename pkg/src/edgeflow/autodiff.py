"""Dense float64 tensor engine with reverse-mode differentiation.

Tensors are immutable after creation and form an implicit tape: every
differentiable op links its output to its inputs together with a closure
that maps the output gradient to input gradients. ``backward`` walks that
tape once, in reverse topological order. Everything is float64 so central
finite differences (``finite_diff_check``) can resolve gradients to 1e-4
relative or better.
"""

from __future__ import annotations

import numpy as np

MAX_RANK = 5


class AutodiffError(Exception):
    """Graph misuse: non-scalar loss, consumed tape, bad op arguments."""


class ShapeError(AutodiffError):
    """Operand shapes violate an op's shape rule; message names the op."""


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_bwd", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), _bwd=None, _op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"{_op}: rank {arr.ndim} exceeds max rank {MAX_RANK}")
        if arr.size == 0:
            raise ShapeError(f"{_op}: zero-extent shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._bwd = _bwd
        self._op = _op
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    # arithmetic sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return tslice(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, bwd, op) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    if not rg:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _bwd=bwd, _op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a: Tensor, b: Tensor, fn, bwd_pair, op: str) -> Tensor:
    try:
        out = fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")
    return _make(out, (a, b), bwd_pair(a, b), op)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd_pair(a, b):
        return lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return _binary(a, b, np.add, bwd_pair, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd_pair(a, b):
        return lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    return _binary(a, b, np.subtract, bwd_pair, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd_pair(a, b):
        return lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    return _binary(a, b, np.multiply, bwd_pair, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    def bwd_pair(a, b):
        return lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )
    return _binary(a, b, np.divide, bwd_pair, "div")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0
    return _make(out, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data)
    sig = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))
    return _make(out, (x,), lambda g: (g * sig,), "softplus")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,), "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)
    mask = (x.data > lo) & (x.data < hi)
    return _make(out, (x,), lambda g: (g * mask,), "clip")


# ---------------------------------------------------------------------------
# reductions and norms

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), bwd, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(out, (x,), bwd, "mean")


def abs_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    """l1 norm over the given axes. Subgradient 0 at exact zeros."""
    axes = _norm_axes(axis, x.ndim)
    out = np.abs(x.data).sum(axis=axes, keepdims=keepdims)
    sgn = np.sign(x.data)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * sgn,)

    return _make(out, (x,), bwd, "abs-sum")


def l2norm(x: Tensor, axis=None, keepdims=False) -> Tensor:
    """sqrt of the sum of squares over the given axes. Gradient 0 at the origin."""
    axes = _norm_axes(axis, x.ndim)
    out = np.sqrt((x.data * x.data).sum(axis=axes, keepdims=keepdims))

    def bwd(g):
        n = out
        if not keepdims:
            g = np.expand_dims(g, axes)
            n = np.expand_dims(out, axes)
        safe = np.where(n > 0.0, n, 1.0)
        return (g * np.where(n > 0.0, x.data / safe, 0.0),)

    return _make(out, (x,), bwd, "sqrt-of-sum-of-squares")


def softmax(x: Tensor, axis: int) -> Tensor:
    ax = axis % x.ndim
    if x.shape[ax] == 0:
        raise ShapeError(f"softmax: axis {axis} has extent 0")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), bwd, "softmax")


# ---------------------------------------------------------------------------
# structure ops

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {x.shape} to {shape}")
    return _make(out, (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return _make(out, (x,), lambda g: (g.transpose(inv),), "permute")


def tslice(x: Tensor, key) -> Tensor:
    out = x.data[key]
    if out.size == 0:
        raise ShapeError(f"slice: empty result from {key} on shape {x.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _make(out, (x,), bwd, "slice")


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows along axis 0 with a constant integer index."""
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, (x,), bwd, "take-rows")


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(out, tuple(tensors), bwd, "concat")


def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity; contributes exactly zero to every input gradient."""
    return Tensor(x.data, requires_grad=False, _op="stop_gradient")


# ---------------------------------------------------------------------------
# linear / matmul / conv

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return _make(out, (a, b), bwd, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (..., K) @ w (K, M) + b (M,)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} vs weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} vs weight {w.shape}")
        out = out + b.data

    lead = x.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1

    def bwd(g):
        g2 = g.reshape(rows, w.shape[1])
        x2 = x.data.reshape(rows, w.shape[0])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if b is None:
            return (gx, gw)
        return (gx, gw, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd, "linear")


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _pad_pair(v):
    """Padding spec per axis: int -> symmetric, (before, after) -> as given."""
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad=0,
           dilation=1, groups: int = 1) -> Tensor:
    """x (Cin, H, W), w (Cout, Cin/groups, kh, kw) -> (Cout, Ho, Wo).

    Zero padding; ``pad`` is an int, an (h, w) pair, or a pair of
    (before, after) pairs for asymmetric padding.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape} weight {w.shape}")
    cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    sh, sw = _pair(stride)
    pads = _pair(pad) if isinstance(pad, int) else tuple(pad)
    (ph0, ph1), (pw0, pw1) = _pad_pair(pads[0]), _pad_pair(pads[1])
    dh, dw = _pair(dilation)
    if cin % groups or cout % groups or cin_g != cin // groups:
        raise ShapeError(f"conv2d: {cin} channels / {groups} groups vs weight {w.shape}")
    ho = (h + ph0 + ph1 - dh * (kh - 1) - 1) // sh + 1
    wo = (wd + pw0 + pw1 - dw * (kw - 1) - 1) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: map {h}x{wd} underflows kernel {kh}x{kw} (pad {pad})")

    if ph0 or ph1 or pw0 or pw1:
        xp = np.zeros((cin, h + ph0 + ph1, wd + pw0 + pw1))
        xp[:, ph0: ph0 + h, pw0: pw0 + wd] = x.data
    else:
        xp = x.data
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (cin, kh, kw, ho, wo), (s0, s1 * dh, s2 * dw, s1 * sh, s2 * sw))
    cols = view.reshape(groups, cin_g * kh * kw, ho * wo)
    w2 = w.data.reshape(groups, cout // groups, cin_g * kh * kw)
    out = np.matmul(w2, cols).reshape(cout, ho, wo)
    if b is not None:
        if b.shape != (cout,):
            raise ShapeError(f"conv2d: bias {b.shape} for {cout} channels")
        out = out + b.data[:, None, None]

    def bwd(g):
        g2 = g.reshape(groups, cout // groups, ho * wo)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).reshape(w.shape)
        gcols = np.matmul(w2.transpose(0, 2, 1), g2)
        gcols = gcols.reshape(cin, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i * dh: i * dh + sh * ho: sh, j * dw: j * dw + sw * wo: sw] += gcols[:, i, j]
        gx = gxp[:, ph0: ph0 + h, pw0: pw0 + wd]
        if b is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=(1, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd, "conv2d")


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=(1, 1, 1),
           pad=(1, 1, 1)) -> Tensor:
    """x (Cin, D, H, W), w (Cout, Cin, kd, kh, kw) -> (Cout, Do, Ho, Wo).

    Zero padding; each pad entry is an int or a (before, after) pair.
    """
    if x.ndim != 4 or w.ndim != 5 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv3d: input {x.shape} weight {w.shape}")
    cin, d, h, wd = x.shape
    cout, _, kd, kh, kw = w.shape
    sd, sh, sw = stride
    (pd0, pd1), (ph0, ph1), (pw0, pw1) = (_pad_pair(p) for p in pad)
    do = (d + pd0 + pd1 - kd) // sd + 1
    ho = (h + ph0 + ph1 - kh) // sh + 1
    wo = (wd + pw0 + pw1 - kw) // sw + 1
    if do < 1 or ho < 1 or wo < 1:
        raise ShapeError(f"conv3d: volume {d}x{h}x{wd} underflows kernel {kd}x{kh}x{kw}")

    if pd0 or pd1 or ph0 or ph1 or pw0 or pw1:
        xp = np.zeros((cin, d + pd0 + pd1, h + ph0 + ph1, wd + pw0 + pw1))
        xp[:, pd0: pd0 + d, ph0: ph0 + h, pw0: pw0 + wd] = x.data
    else:
        xp = x.data
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (cin, kd, kh, kw, do, ho, wo),
        (s0, s1, s2, s3, s1 * sd, s2 * sh, s3 * sw))
    cols = view.reshape(cin * kd * kh * kw, do * ho * wo)
    w2 = w.data.reshape(cout, cin * kd * kh * kw)
    out = (w2 @ cols).reshape(cout, do, ho, wo)
    if b is not None:
        out = out + b.data[:, None, None, None]

    def bwd(g):
        g2 = g.reshape(cout, do * ho * wo)
        gw = (g2 @ cols.T).reshape(w.shape)
        gcols = (w2.T @ g2).reshape(cin, kd, kh, kw, do, ho, wo)
        gxp = np.zeros_like(xp)
        for a in range(kd):
            for i in range(kh):
                for j in range(kw):
                    gxp[:, a: a + sd * do: sd, i: i + sh * ho: sh, j: j + sw * wo: sw] += gcols[:, a, i, j]
        gx = gxp[:, pd0: pd0 + d, ph0: ph0 + h, pw0: pw0 + wd]
        if b is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=(1, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd, "conv3d")


def avg_pool2d(x: Tensor, kernel: int, stride: int, pad: int = 0) -> Tensor:
    """Average pooling on (C, H, W) with constant divisor kernel**2 (zero pad counts)."""
    if x.ndim != 3:
        raise ShapeError(f"avg_pool2d: expected rank 3, got {x.shape}")
    c, h, wd = x.shape
    k, st, p = kernel, stride, pad
    ho = (h + 2 * p - k) // st + 1
    wo = (wd + 2 * p - k) // st + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"avg_pool2d: map {h}x{wd} underflows kernel {k}")
    if p:
        xp = np.zeros((c, h + 2 * p, wd + 2 * p))
        xp[:, p: p + h, p: p + wd] = x.data
    else:
        xp = x.data
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(xp, (c, k, k, ho, wo), (s0, s1, s2, s1 * st, s2 * st))
    out = view.sum(axis=(1, 2)) / (k * k)

    def bwd(g):
        gxp = np.zeros_like(xp)
        gk = g / (k * k)
        for i in range(k):
            for j in range(k):
                gxp[:, i: i + st * ho: st, j: j + st * wo: st] += gk
        return (gxp[:, p: p + h, p: p + wd],)

    return _make(out, (x,), bwd, "avg_pool2d")


def spatial_gradient(x: Tensor) -> Tensor:
    """Forward differences of (C, H, W) -> (2, C, H, W): [d/dcol, d/drow].

    The far border is zero-padded, i.e. the last column/row of each
    difference field is zero.
    """
    if x.ndim != 3:
        raise ShapeError(f"spatial_gradient: expected rank 3, got {x.shape}")
    d = x.data
    du = np.zeros_like(d)
    dv = np.zeros_like(d)
    du[:, :, :-1] = d[:, :, 1:] - d[:, :, :-1]
    dv[:, :-1, :] = d[:, 1:, :] - d[:, :-1, :]
    out = np.stack([du, dv])

    def bwd(g):
        gu, gv = g[0], g[1]
        gx = np.zeros_like(d)
        gx[:, :, :-1] -= gu[:, :, :-1]
        gx[:, :, 1:] += gu[:, :, :-1]
        gx[:, :-1, :] -= gv[:, :-1, :]
        gx[:, 1:, :] += gv[:, :-1, :]
        return (gx,)

    return _make(out, (x,), bwd, "spatial_gradient")


def laplacian2d(x: Tensor) -> Tensor:
    """5-point Laplacian high-pass per channel of (C, H, W).

    Borders replicate, so any constant field maps to exactly zero.
    """
    if x.ndim != 3:
        raise ShapeError(f"laplacian2d: expected rank 3, got {x.shape}")
    c0, h0, w0 = x.shape
    xp = np.empty((c0, h0 + 2, w0 + 2))
    xp[:, 1:-1, 1:-1] = x.data
    xp[:, 0, 1:-1] = x.data[:, 0, :]
    xp[:, -1, 1:-1] = x.data[:, -1, :]
    xp[:, :, 0] = xp[:, :, 1]
    xp[:, :, -1] = xp[:, :, -2]
    # sum of neighbor differences: exactly zero on constant fields
    ctr = xp[:, 1:-1, 1:-1]
    out = ((xp[:, :-2, 1:-1] - ctr) + (xp[:, 2:, 1:-1] - ctr)
           + (xp[:, 1:-1, :-2] - ctr) + (xp[:, 1:-1, 2:] - ctr))

    def bwd(g):
        gp = np.zeros_like(xp)
        gp[:, 1:-1, 1:-1] += -4.0 * g
        gp[:, :-2, 1:-1] += g
        gp[:, 2:, 1:-1] += g
        gp[:, 1:-1, :-2] += g
        gp[:, 1:-1, 2:] += g
        # fold the replicate-pad ring back onto the edge pixels
        gx = gp[:, 1:-1, 1:-1].copy()
        gx[:, 0, :] += gp[:, 0, 1:-1]
        gx[:, -1, :] += gp[:, -1, 1:-1]
        gx[:, :, 0] += gp[:, 1:-1, 0]
        gx[:, :, -1] += gp[:, 1:-1, -1]
        gx[:, 0, 0] += gp[:, 0, 0]
        gx[:, 0, -1] += gp[:, 0, -1]
        gx[:, -1, 0] += gp[:, -1, 0]
        gx[:, -1, -1] += gp[:, -1, -1]
        return (gx,)

    return _make(out, (x,), bwd, "laplacian2d")


# ---------------------------------------------------------------------------
# sampling / scattering

def bilinear_sample(grid: Tensor, coords: Tensor) -> Tensor:
    """Sample grid (C, H, W) at continuous image coords (N, 2) as (u, v).

    Pixel (r, c) covers [c, c+1) x [r, r+1) with its center at
    (c + 0.5, r + 0.5); samples outside the grid clamp to the border.
    Differentiable in both the grid values and the coordinates.
    """
    if grid.ndim != 3 or coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"bilinear_sample: grid {grid.shape}, coords {coords.shape}")
    c, h, w = grid.shape
    u = coords.data[:, 0]
    v = coords.data[:, 1]
    tu = np.clip(u - 0.5, 0.0, w - 1.0)
    tv = np.clip(v - 0.5, 0.0, h - 1.0)
    in_u = (u - 0.5 > 0.0) & (u - 0.5 < w - 1.0)
    in_v = (v - 0.5 > 0.0) & (v - 0.5 < h - 1.0)
    i0 = np.minimum(np.floor(tu).astype(np.int64), max(w - 2, 0))
    j0 = np.minimum(np.floor(tv).astype(np.int64), max(h - 2, 0))
    fu = tu - i0
    fv = tv - j0
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)

    gf = grid.data.reshape(c, h * w)
    g00 = gf[:, j0 * w + i0]
    g01 = gf[:, j0 * w + i1]
    g10 = gf[:, j1 * w + i0]
    g11 = gf[:, j1 * w + i1]
    w00 = (1 - fv) * (1 - fu)
    w01 = (1 - fv) * fu
    w10 = fv * (1 - fu)
    w11 = fv * fu
    out = (g00 * w00 + g01 * w01 + g10 * w10 + g11 * w11).T  # (N, C)

    def bwd(g):
        gt = g.T  # (C, N)
        gg = np.zeros((h * w, c))
        np.add.at(gg, j0 * w + i0, (gt * w00).T)
        np.add.at(gg, j0 * w + i1, (gt * w01).T)
        np.add.at(gg, j1 * w + i0, (gt * w10).T)
        np.add.at(gg, j1 * w + i1, (gt * w11).T)
        ggrid = gg.T.reshape(grid.shape)
        du = ((g01 - g00) * (1 - fv) + (g11 - g10) * fv) * gt
        dv = ((g10 - g00) * (1 - fu) + (g11 - g01) * fu) * gt
        gc = np.stack([du.sum(axis=0) * in_u, dv.sum(axis=0) * in_v], axis=1)
        return (ggrid, gc)

    return _make(out, (grid, coords), bwd, "bilinear_sample")


def scatter_mean(values: Tensor, cells: np.ndarray, num_cells: int) -> Tensor:
    """Mean of value rows (N, C) per cell index; empty cells are zero."""
    if values.ndim != 2:
        raise ShapeError(f"scatter_mean: expected rank 2 values, got {values.shape}")
    cells = np.asarray(cells, dtype=np.int64)
    if cells.shape != (values.shape[0],):
        raise ShapeError(f"scatter_mean: {cells.shape} indices for {values.shape} values")
    counts = np.bincount(cells, minlength=num_cells).astype(np.float64)
    sums = np.zeros((num_cells, values.shape[1]))
    np.add.at(sums, cells, values.data)
    denom = np.maximum(counts, 1.0)[:, None]
    out = sums / denom

    def bwd(g):
        return ((g / denom)[cells],)

    return _make(out, (values,), bwd, "scatter_mean")


def fill_rows(x: Tensor, row_idx: np.ndarray, nbr_idx: np.ndarray,
              nbr_w: np.ndarray) -> Tensor:
    """Overwrite rows of (M, C) with weighted sums of other rows.

    out[row_idx[e]] = sum_j nbr_w[e, j] * x[nbr_idx[e, j]]; all other rows
    pass through. row_idx must not appear in nbr_idx.
    """
    if x.ndim != 2:
        raise ShapeError(f"fill_rows: expected rank 2, got {x.shape}")
    row_idx = np.asarray(row_idx, dtype=np.int64)
    nbr_idx = np.asarray(nbr_idx, dtype=np.int64)
    out = x.data.copy()
    if row_idx.size:
        out[row_idx] = np.einsum("ek,ekc->ec", nbr_w, x.data[nbr_idx])

    def bwd(g):
        gx = g.copy()
        if row_idx.size:
            ge = gx[row_idx].copy()
            gx[row_idx] = 0.0
            k = nbr_idx.shape[1]
            flat = nbr_idx.ravel()
            contrib = (nbr_w[:, :, None] * ge[:, None, :]).reshape(-1, g.shape[1])
            np.add.at(gx, flat, contrib)
        return (gx,)

    return _make(out, (x,), bwd, "fill-rows")


def _upsample_weights(n: int) -> np.ndarray:
    """(2n, n) row-stochastic bilinear weights, half-pixel-center convention."""
    t = np.clip((np.arange(2 * n) + 0.5) / 2.0 - 0.5, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(t).astype(np.int64), max(n - 2, 0))
    f = t - i0
    m = np.zeros((2 * n, n))
    rows = np.arange(2 * n)
    m[rows, i0] += 1.0 - f
    m[rows, np.minimum(i0 + 1, n - 1)] += f
    return m


_UPSAMPLE_CACHE: dict[int, np.ndarray] = {}


def upsample2x_bilinear(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling of (C, H, W) -> (C, 2H, 2W); constants map to constants."""
    if x.ndim != 3:
        raise ShapeError(f"upsample2x_bilinear: expected rank 3, got {x.shape}")
    _, h, w = x.shape
    mh = _UPSAMPLE_CACHE.setdefault(h, _upsample_weights(h))
    mw = _UPSAMPLE_CACHE.setdefault(w, _upsample_weights(w)) if w != h else mh
    y = np.einsum("hj,cjw->chw", mh, x.data)
    out = np.einsum("wk,chk->chw", mw, y)

    def bwd(g):
        gy = np.einsum("wk,chw->chk", mw, g)
        return (np.einsum("hj,chw->cjw", mh, gy),)

    return _make(out, (x,), bwd, "upsample2x_bilinear")


# ---------------------------------------------------------------------------
# generic dispatch, backward walk, gradient checking

_DISPATCH = {
    "add": lambda ins, at: add(*ins),
    "sub": lambda ins, at: sub(*ins),
    "mul": lambda ins, at: mul(*ins),
    "div": lambda ins, at: div(*ins),
    "matmul": lambda ins, at: matmul(*ins),
    "conv2d": lambda ins, at: conv2d(*ins, **at),
    "conv3d": lambda ins, at: conv3d(*ins, **at),
    "linear": lambda ins, at: linear(*ins),
    "relu": lambda ins, at: relu(*ins),
    "sigmoid": lambda ins, at: sigmoid(*ins),
    "softplus": lambda ins, at: softplus(*ins),
    "softmax": lambda ins, at: softmax(ins[0], at["axis"]),
    "exp": lambda ins, at: exp(*ins),
    "log": lambda ins, at: log(*ins),
    "clip": lambda ins, at: clip(ins[0], at["lo"], at["hi"]),
    "abs-sum": lambda ins, at: abs_sum(ins[0], at.get("axis"), at.get("keepdims", False)),
    "sqrt-of-sum-of-squares": lambda ins, at: l2norm(ins[0], at.get("axis"), at.get("keepdims", False)),
    "mean": lambda ins, at: mean(ins[0], at.get("axes"), at.get("keepdims", False)),
    "sum": lambda ins, at: tsum(ins[0], at.get("axes"), at.get("keepdims", False)),
    "avg_pool2d": lambda ins, at: avg_pool2d(ins[0], at["kernel"], at["stride"], at.get("pad", 0)),
    "spatial_gradient": lambda ins, at: spatial_gradient(*ins),
    "laplacian2d": lambda ins, at: laplacian2d(*ins),
    "concat": lambda ins, at: concat(ins, at["axis"]),
    "slice": lambda ins, at: tslice(ins[0], at["key"]),
    "reshape": lambda ins, at: reshape(ins[0], at["shape"]),
    "broadcast": lambda ins, at: broadcast_to(ins[0], at["shape"]),
    "permute": lambda ins, at: permute(ins[0], at["axes"]),
    "take-rows": lambda ins, at: take_rows(ins[0], at["idx"]),
    "stop_gradient": lambda ins, at: stop_gradient(*ins),
    "bilinear_sample": lambda ins, at: bilinear_sample(*ins),
    "scatter_mean": lambda ins, at: scatter_mean(ins[0], at["cells"], at["num_cells"]),
    "upsample2x_bilinear": lambda ins, at: upsample2x_bilinear(*ins),
}


def forward_op(kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Apply an op by kind name; records graph nodes when any input needs grad."""
    if kind not in _DISPATCH:
        raise AutodiffError(f"unknown op kind '{kind}'")
    return _DISPATCH[kind]([_as_tensor(t) for t in inputs], attrs or {})


def _topo_order(loss: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; inputs always precede their consumers."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None) -> dict:
    """Reverse-mode gradients of a scalar loss.

    Returns a dict mapping leaf Tensors to gradient Tensors. With ``params``
    given, exactly those tensors are keyed and unreachable ones get zeros.
    """
    if loss.data.shape != ():
        raise AutodiffError(f"backward: loss must be rank-0, got shape {loss.data.shape}")
    if loss._consumed:
        raise AutodiffError("backward: tape already consumed for this loss")
    loss._consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
    if loss.requires_grad:
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._bwd is None:
                leaves[id(node)] = (node, g)
                continue
            for p, pg in zip(node._parents, node._bwd(g)):
                if not p.requires_grad or pg is None:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    if params is None:
        return {t: Tensor(g) for t, g in leaves.values()}
    out = {}
    for p in params:
        hit = leaves.get(id(p))
        out[p] = Tensor(hit[1]) if hit is not None else Tensor(np.zeros(p.shape))
    return out


def finite_diff_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the parameter list to a scalar Tensor and must be
    deterministic (fix any internal sampling seed). Error per entry is
    |analytic - cd| / max(1, |cd|); returns the max over all entries.
    """
    if eps <= 0:
        raise AutodiffError("finite_diff_check: eps must be positive")
    params = list(params)
    loss = f(params)
    analytic = backward(loss, params)

    worst = 0.0
    for k, p in enumerate(params):
        flat = p.data.ravel()
        ga = analytic[p].data.ravel()
        for i in range(flat.size):
            probe = [q if j != k else None for j, q in enumerate(params)]

            def eval_at(value):
                bumped = p.data.copy()
                bumped.ravel()[i] = value
                probe[k] = Tensor(bumped, requires_grad=True)
                r = float(f(probe).data)
                if not np.isfinite(r):
                    raise AutodiffError(
                        f"finite_diff_check: non-finite value at param {k} entry {i}")
                return r

            fp = eval_at(flat[i] + eps)
            fm = eval_at(flat[i] - eps)
            cd = (fp - fm) / (2.0 * eps)
            rel = abs(ga[i] - cd) / max(1.0, abs(cd))
            if rel > worst:
                worst = rel
    return worst
