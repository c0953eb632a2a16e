"""float32 tensors with reverse-mode autodiff on an append-order tape.

The operator set is exactly what the enhancement pipeline needs: 3x3
same-padding convolution, ReLU/tanh, 2x2 max pooling, global average
pooling, dense layers, softmax, channel concatenation, elementwise
arithmetic, clamping and MSE.

Numeric policy: values are stored as float32; reductions (dot products
in dense layers, pooling means, softmax normalisation, MSE) accumulate
in float64. Convolution runs through float32 BLAS matmuls on im2col
buffers, which keeps the training loop fast; the gradient-check suite
validates that this stays within the 1e-3 finite-difference tolerance.

Recording: ops record onto the module's single active ``Graph`` (see
``with Graph() as g``). Appending order is a topological order, so
``backward`` is a single reverse sweep and is deterministic. With no
active graph, ops run forward-only and are safe to call concurrently
on disjoint inputs sharing read-only parameters. Graph recording and
backward are single-threaded per graph.
"""

from __future__ import annotations

import threading

import numpy as np

from . import _blas
from .errors import GraphError, ShapeError, SizeError

__all__ = [
    "Tensor",
    "Graph",
    "tensor",
    "conv2d",
    "apply_activation",
    "relu",
    "tanh",
    "maxpool2x2",
    "global_avg_pool",
    "linear",
    "softmax",
    "concat_channels",
    "add",
    "sub",
    "scale",
    "clamp01",
    "mse",
    "resize_bilinear",
]


class _BufferPool:
    """Recycles the large scratch buffers (im2col columns, padded planes,
    gradient accumulators) that otherwise force fresh page-faulting mmaps
    on every training step."""

    def __init__(self, cap_bytes=768 << 20):
        self._free = {}
        self._bytes = 0
        self._cap = cap_bytes
        self._lock = threading.Lock()

    def get(self, shape):
        """Return an uninitialised float32 array of `shape`; contents are garbage."""
        n = 1
        for d in shape:
            n *= int(d)
        with self._lock:
            stack = self._free.get(n)
            if stack:
                buf = stack.pop()
                self._bytes -= buf.nbytes
                return buf.reshape(shape)
        return np.empty(n, dtype=np.float32).reshape(shape)

    def put(self, arr):
        base = arr
        while base.base is not None:
            base = base.base
        if not isinstance(base, np.ndarray) or base.dtype != np.float32:
            return
        if base.size * 4 != base.nbytes or not base.flags["C_CONTIGUOUS"]:
            return
        with self._lock:
            if self._bytes + base.nbytes > self._cap:
                return
            self._free.setdefault(base.size, []).append(base.reshape(-1))
            self._bytes += base.nbytes


_POOL = _BufferPool()

# Single active tape; see module docstring for the threading contract.
_ACTIVE: "Graph | None" = None

# Test hook used by the gradient checker's self-test: maps an op name to a
# callable applied to that op's input gradients during backward.
_GRAD_HOOK = None


class Tensor:
    """Dense float32 array, optionally carrying a gradient buffer and a
    position on the active tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_graph", "_node")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._graph = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise GraphError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(())[()])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.data.shape)}{tag})"


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


class _Node:
    __slots__ = ("op", "inputs", "backward", "leaf", "pooled")

    def __init__(self, op, inputs, backward, leaf, pooled):
        self.op = op
        self.inputs = inputs
        self.backward = backward
        self.leaf = leaf
        self.pooled = pooled


class Graph:
    """Append-only computation tape.

    Node inputs always have smaller indices than the node itself, so the
    list order is a topological order and ``backward`` is one reverse pass.
    ``release()`` returns internal scratch buffers to the pool; call it once
    the graph (including any ``backward``) is finished. Op output tensors
    stay valid after release.
    """

    def __init__(self):
        self.nodes = []
        self._released = False

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise GraphError("a graph is already recording; graphs do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = None
        return False

    def _index_of(self, t):
        if t._graph is self and t._node is not None:
            return t._node
        idx = len(self.nodes)
        self.nodes.append(_Node("leaf", (), None, t, []))
        t._graph = self
        t._node = idx
        return idx

    def _add(self, op, out, inputs, tracked, backward, pooled):
        idxs = tuple(
            self._index_of(t) if tr else None for t, tr in zip(inputs, tracked)
        )
        out._graph = self
        out._node = len(self.nodes)
        # pooled is kept by reference: conv backward appends scratch it
        # allocates mid-sweep so release() can reclaim it too
        self.nodes.append(_Node(op, idxs, backward, None, pooled if isinstance(pooled, list) else list(pooled)))

    def backward(self, loss, seed=1.0):
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

        Gradients add across graph fan-out and across calls; zero leaf grads
        between optimisation steps. ``seed`` scales the whole sweep (used for
        batch averaging).
        """
        if not isinstance(loss, Tensor):
            raise GraphError("backward expects a Tensor loss")
        if loss._graph is not self or loss._node is None:
            raise GraphError("loss was not recorded on this graph")
        if loss.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {tuple(loss.data.shape)}"
            )
        if self._released:
            raise GraphError("graph was released; saved buffers are gone")
        start = loss._node
        grads = [None] * (start + 1)
        buf = _POOL.get(loss.data.shape)
        buf[...] = np.float32(seed)
        grads[start] = buf
        hook = _GRAD_HOOK
        for i in range(start, -1, -1):
            g = grads[i]
            grads[i] = None
            if g is None:
                continue
            node = self.nodes[i]
            if node.leaf is not None:
                leaf = node.leaf
                if leaf.grad is None:
                    leaf.grad = np.zeros_like(leaf.data)
                leaf.grad += g.reshape(leaf.data.shape)
            else:
                gs = node.backward(g)
                if hook is not None:
                    gs = hook(node.op, gs)
                for j, gi in zip(node.inputs, gs):
                    if j is None or gi is None:
                        continue
                    acc = grads[j]
                    if acc is None:
                        acc = _POOL.get(gi.shape)
                        np.copyto(acc, gi)
                        grads[j] = acc
                    else:
                        acc += gi
            _POOL.put(g)

    def release(self):
        """Return all node scratch buffers to the pool. Idempotent."""
        if self._released:
            return
        self._released = True
        for node in self.nodes:
            for buf in node.pooled:
                _POOL.put(buf)
            node.pooled = []
            node.backward = None


def _record(op, out, inputs, backward_builder, pooled=()):
    """Record `op` on the active graph if any input is tracked.

    `backward_builder` is called lazily (only when recording) and must return
    the backward closure. When nothing records, pooled scratch is returned to
    the pool immediately.
    """
    g = _ACTIVE
    if g is not None:
        tracked = [
            (t.requires_grad or t._graph is g and t._node is not None)
            for t in inputs
        ]
        if any(tracked):
            g._add(op, out, inputs, tracked, backward_builder(), pooled)
            return out
    for buf in pooled:
        _POOL.put(buf)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _require_ndim(op, t, ndim, what):
    if t.data.ndim != ndim:
        raise ShapeError(f"{op}: {what} must have {ndim} dims, got shape {tuple(t.data.shape)}")


# --------------------------------------------------------------------------
# convolution
#
# Primary path: nine shifted GEMMs accumulating straight into the output
# through BLAS beta=1 on zero-copy views (a 3x3 kernel offset is a constant
# shift in flat pixel index), with small corrections where the flat shift
# wraps across row ends. No im2col buffer ever materialises, so operands
# stay cache-resident. Fallback path (no reachable BLAS): row-tiled im2col.

_FAST_CONV = _blas.sgemm is not None

_OFFSETS = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))


def _weight_offsets(wd):
    """(3,3,C_out,C_in) contiguous view of the kernel taps."""
    return np.ascontiguousarray(wd.transpose(2, 3, 0, 1))


def _flipped_offsets(wd):
    """Taps for the input-gradient convolution: channel-swapped, flipped."""
    return np.ascontiguousarray(wd.transpose(2, 3, 1, 0)[::-1, ::-1])


def _wrap_rows(dy, dx, height):
    """Output rows whose flat-shifted read wrapped across a row end, i.e.
    where the wrapped source row exists; returns (row0, row1, src_offset)."""
    if dx == 1:
        return max(0, -dy - 1), min(height, height - dy - 1), dy + 1
    return max(0, 1 - dy), min(height, height + 1 - dy), dy - 1


def _shift_conv(xd, taps, c_out, bias=None):
    """y = conv3x3(x, taps) + bias via shifted accumulating GEMMs."""
    c_in, height, width = xd.shape
    hw = height * width
    xf = xd.reshape(c_in, hw)
    y = np.empty((c_out, height, width), dtype=np.float32)
    yf = y.reshape(c_out, hw)
    if bias is None:
        yf.fill(0.0)
    else:
        yf[:] = bias[:, None]
    x_left = np.ascontiguousarray(xd[:, :, 0])
    x_right = np.ascontiguousarray(xd[:, :, -1])
    for dy, dx in _OFFSETS:
        wk = taps[dy + 1, dx + 1]
        s = dy * width + dx
        lo = -s if s < 0 else 0
        hi = hw - (s if s > 0 else 0)
        if hi > lo:
            _blas.sgemm(1.0, wk, xf[:, lo + s:hi + s], 1.0, yf[:, lo:hi])
        if dx != 0:
            r0, r1, off = _wrap_rows(dy, dx, height)
            if r1 > r0:
                src = (x_right if dx == -1 else x_left)[:, r0 + off:r1 + off]
                dst_col = 0 if dx == -1 else width - 1
                y[:, r0:r1, dst_col] -= wk @ src
    return y


def _shift_conv_gw(gd, xd):
    """Kernel gradient via one GEMM per tap on the same shifted views."""
    c_out = gd.shape[0]
    c_in, height, width = xd.shape
    hw = height * width
    gf = gd.reshape(c_out, hw)
    xf = xd.reshape(c_in, hw)
    gw9 = np.empty((3, 3, c_out, c_in), dtype=np.float32)
    x_left = np.ascontiguousarray(xd[:, :, 0])
    x_right = np.ascontiguousarray(xd[:, :, -1])
    g_left = np.ascontiguousarray(gd[:, :, 0])
    g_right = np.ascontiguousarray(gd[:, :, -1])
    for dy, dx in _OFFSETS:
        s = dy * width + dx
        lo = -s if s < 0 else 0
        hi = hw - (s if s > 0 else 0)
        blk = gw9[dy + 1, dx + 1]
        if hi > lo:
            _blas.sgemm(1.0, gf[:, lo:hi], xf[:, lo + s:hi + s], 0.0, blk,
                        trans_b=_blas.TRANS)
        else:
            blk.fill(0.0)
        if dx != 0:
            r0, r1, off = _wrap_rows(dy, dx, height)
            if r1 > r0:
                xcol = (x_right if dx == -1 else x_left)[:, r0 + off:r1 + off]
                gcol = (g_left if dx == -1 else g_right)[:, r0:r1]
                blk -= gcol @ xcol.T
    return np.ascontiguousarray(gw9.transpose(2, 3, 0, 1))


# Upper bound on im2col block size (floats) for the fallback path. Large
# images are processed in row blocks so a 1080p convolution never
# materialises a multi-GB buffer.
_COL_ELEM_LIMIT = 16 << 20


def _row_blocks(c_in, height, width):
    per_row = c_in * 9 * width
    rows = max(1, _COL_ELEM_LIMIT // per_row)
    return [(r0, min(r0 + rows, height)) for r0 in range(0, height, rows)]


def _im2col_block(xp, r0, r1, width, col):
    """Fill `col` (C,3,3,r1-r0,W) from padded input rows [r0, r1+2)."""
    bh = r1 - r0
    for ky in range(3):
        for kx in range(3):
            col[:, ky, kx] = xp[:, r0 + ky:r0 + ky + bh, kx:kx + width]
    return col.reshape(col.shape[0] * 9, bh * width)


def _conv_run(xd, wmat, c_out, bias=None, keep_cols=False, out=None):
    """Shared padded-im2col GEMM core: y = wmat @ im2col(xd) (+ bias).

    Row-tiled so large images never materialise a huge column buffer.
    With keep_cols the pooled column blocks are returned for the weight
    gradient; otherwise they go straight back to the pool.
    """
    c_in, height, width = xd.shape
    xp = _POOL.get((c_in, height + 2, width + 2))
    xp[:, 0, :] = 0.0
    xp[:, -1, :] = 0.0
    xp[:, :, 0] = 0.0
    xp[:, :, -1] = 0.0
    xp[:, 1:-1, 1:-1] = xd
    y = np.empty((c_out, height, width), dtype=np.float32) if out is None else out
    blocks = _row_blocks(c_in, height, width)
    saved = [] if keep_cols else None
    for r0, r1 in blocks:
        bh = r1 - r0
        col = _POOL.get((c_in, 3, 3, bh, width))
        colmat = _im2col_block(xp, r0, r1, width, col)
        if len(blocks) == 1:
            ymat = y.reshape(c_out, height * width)
            if c_out < 8:
                # skinny-output GEMM runs far faster transposed
                ymat[...] = (colmat.T @ wmat.T).T
            else:
                np.matmul(wmat, colmat, out=ymat)
            if bias is not None:
                ymat += bias[:, None]
        else:
            tmp = _POOL.get((c_out, bh * width))
            np.matmul(wmat, colmat, out=tmp)
            if bias is not None:
                tmp += bias[:, None]
            y[:, r0:r1, :] = tmp.reshape(c_out, bh, width)
            _POOL.put(tmp)
        if keep_cols:
            saved.append((r0, r1, col))
        else:
            _POOL.put(col)
    _POOL.put(xp)
    return y, saved


# contraction sides at or below this width run through a single small
# im2col GEMM instead of nine skinny ones
_SMALL_K = 8


def _conv_forward(xd, wd, bd):
    c_out, c_in = wd.shape[:2]
    if _FAST_CONV and c_in > _SMALL_K:
        return _shift_conv(xd, _weight_offsets(wd), c_out, bias=bd), None
    return _conv_run(xd, wd.reshape(c_out, c_in * 9), c_out, bias=bd, keep_cols=True)


def _im2col_gw(g3, saved, c_out, c_in, width):
    gmat_full = g3.reshape(c_out, -1)
    gw = np.zeros((c_out, c_in * 9), dtype=np.float64)
    single = len(saved) == 1
    for r0, r1, col in saved:
        bh = r1 - r0
        colmat = col.reshape(c_in * 9, bh * width)
        if single:
            gblock = gmat_full
        else:
            gblock = np.ascontiguousarray(g3[:, r0:r1, :]).reshape(c_out, bh * width)
        if c_out < 8:
            gw += (colmat @ gblock.T).T
        else:
            gw += gblock @ colmat.T
    return gw.astype(np.float32).reshape(c_out, c_in, 3, 3)


def _conv_backward(g, wd, xd, saved, need_gx):
    c_out, c_in = wd.shape[:2]
    height, width = xd.shape[1:]
    g3 = g.reshape(c_out, height, width)
    gb = g.reshape(c_out, -1).sum(axis=1, dtype=np.float64).astype(np.float32)
    if saved is None:
        gw = _shift_conv_gw(g3, xd)
    else:
        gw = _im2col_gw(g3, saved, c_out, c_in, width)
    gx = None
    if need_gx:
        # grad wrt input = same-padding correlation of g with the
        # channel-swapped, spatially flipped kernel
        if _FAST_CONV and c_out > _SMALL_K:
            gx = _shift_conv(g3, _flipped_offsets(wd), c_in)
        else:
            wflip = np.ascontiguousarray(
                wd.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
            ).reshape(c_in, c_out * 9)
            gx, _ = _conv_run(g3, wflip, c_in)
    return gx, gw, gb


def conv2d(x, weights, bias):
    """3x3 cross-correlation, stride 1, zero padding 1; spatial dims preserved.

    x: C_in x H x W, weights: C_out x C_in x 3 x 3, bias: C_out.
    """
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    _require_ndim("conv2d", x, 3, "input")
    if weights.data.ndim != 4 or weights.data.shape[2:] != (3, 3):
        raise ShapeError(
            f"conv2d: weights must be C_out x C_in x 3 x 3, got {tuple(weights.data.shape)}"
        )
    c_in = x.data.shape[0]
    c_out = weights.data.shape[0]
    if weights.data.shape[1] != c_in:
        raise ShapeError(
            f"conv2d: input has {c_in} channels but weights expect {weights.data.shape[1]}"
        )
    if bias.data.shape != (c_out,):
        raise ShapeError(
            f"conv2d: bias must have shape ({c_out},), got {tuple(bias.data.shape)}"
        )
    y, saved = _conv_forward(x.data, weights.data, bias.data)
    out = Tensor(y)
    pooled = [] if saved is None else [col for _, _, col in saved]
    g = _ACTIVE
    if g is not None:
        tracked = [
            (t.requires_grad or t._graph is g and t._node is not None)
            for t in (x, weights, bias)
        ]
        if any(tracked):
            xd = x.data
            wd = weights.data
            need_gx = tracked[0]

            def bwd(gout):
                return _conv_backward(gout, wd, xd, saved, need_gx)

            g._add("conv2d", out, (x, weights, bias), tracked, bwd, pooled)
            return out
    for col in pooled:
        _POOL.put(col)
    return out


# --------------------------------------------------------------------------
# activations

def relu(x):
    x = _as_tensor(x)
    y = np.maximum(x.data, 0.0)
    out = Tensor(y)

    def build():
        def bwd(g):
            return (g * (y > 0),)

        return bwd

    return _record("relu", out, (x,), build)


def tanh(x):
    x = _as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)

    def build():
        def bwd(g):
            return (g * (1.0 - y * y),)

        return bwd

    return _record("tanh", out, (x,), build)


_ACTIVATIONS = {"relu": relu, "tanh": tanh}


def apply_activation(x, kind):
    """Elementwise activation; kind is 'relu' or 'tanh'."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return fn(x)


# --------------------------------------------------------------------------
# pooling

def maxpool2x2(x):
    """2x2 max pooling with stride 2; odd trailing row/column truncated."""
    x = _as_tensor(x)
    _require_ndim("maxpool2x2", x, 3, "input")
    c, height, width = x.data.shape
    if height < 2 or width < 2:
        raise SizeError(f"maxpool2x2: spatial dims must be >= 2, got {height}x{width}")
    h2, w2 = height // 2, width // 2
    win = x.data[:, : h2 * 2, : w2 * 2].reshape(c, h2, 2, w2, 2)
    flat = np.ascontiguousarray(win.transpose(0, 1, 3, 2, 4)).reshape(c, h2, w2, 4)
    am = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, am[..., None], axis=-1)[..., 0]
    out = Tensor(y)

    def build():
        def bwd(g):
            scat = np.zeros((c, h2, w2, 4), dtype=np.float32)
            np.put_along_axis(scat, am[..., None], g[..., None], axis=-1)
            gx = np.zeros((c, height, width), dtype=np.float32)
            gx[:, : h2 * 2, : w2 * 2] = (
                scat.reshape(c, h2, w2, 2, 2)
                .transpose(0, 1, 3, 2, 4)
                .reshape(c, h2 * 2, w2 * 2)
            )
            return (gx,)

        return bwd

    return _record("maxpool2x2", out, (x,), build)


def global_avg_pool(x):
    """Per-channel spatial mean: C x H x W -> C. Accumulates in float64."""
    x = _as_tensor(x)
    _require_ndim("global_avg_pool", x, 3, "input")
    c, height, width = x.data.shape
    y = x.data.mean(axis=(1, 2), dtype=np.float64).astype(np.float32)
    out = Tensor(y)

    def build():
        inv = np.float32(1.0 / (height * width))

        def bwd(g):
            return (np.broadcast_to((g * inv)[:, None, None], (c, height, width)),)

        return bwd

    return _record("global_avg_pool", out, (x,), build)


# --------------------------------------------------------------------------
# dense / softmax

def linear(x, weights, bias):
    """y = W @ x + b for a 1-D x; the dot products accumulate in float64."""
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    _require_ndim("linear", x, 1, "input")
    _require_ndim("linear", weights, 2, "weights")
    n, m = weights.data.shape
    if x.data.shape != (m,):
        raise ShapeError(
            f"linear: weights are {n}x{m} but input has shape {tuple(x.data.shape)}"
        )
    if bias.data.shape != (n,):
        raise ShapeError(f"linear: bias must have shape ({n},), got {tuple(bias.data.shape)}")
    y64 = weights.data.astype(np.float64) @ x.data.astype(np.float64)
    y64 += bias.data
    out = Tensor(y64.astype(np.float32))
    wd, xd = weights.data, x.data

    def build():
        def bwd(g):
            g64 = g.astype(np.float64)
            gx = (wd.T.astype(np.float64) @ g64).astype(np.float32)
            gw = np.outer(g, xd)
            return gx, gw, g

        return bwd

    return _record("linear", out, (x, weights, bias), build)


def softmax(x):
    """Stable softmax of a 1-D tensor; outputs are positive and sum to 1."""
    x = _as_tensor(x)
    _require_ndim("softmax", x, 1, "input")
    z = x.data.astype(np.float64)
    z = np.exp(z - z.max())
    s = z / z.sum()
    out = Tensor(s.astype(np.float32))
    s32 = out.data

    def build():
        def bwd(g):
            inner = np.float32(np.dot(g.astype(np.float64), s32.astype(np.float64)))
            return (s32 * (g - inner),)

        return bwd

    return _record("softmax", out, (x,), build)


# --------------------------------------------------------------------------
# structural / elementwise

def concat_channels(a, b):
    """Stack two C x H x W tensors along the channel axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    _require_ndim("concat_channels", a, 3, "first input")
    _require_ndim("concat_channels", b, 3, "second input")
    if a.data.shape[1:] != b.data.shape[1:]:
        raise ShapeError(
            f"concat_channels: spatial dims differ: {tuple(a.data.shape)} vs {tuple(b.data.shape)}"
        )
    c1 = a.data.shape[0]
    out = Tensor(np.concatenate([a.data, b.data], axis=0))

    def build():
        def bwd(g):
            return g[:c1], g[c1:]

        return bwd

    return _record("concat_channels", out, (a, b), build)


def _require_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{op}: shapes differ: {tuple(a.data.shape)} vs {tuple(b.data.shape)}"
        )


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _require_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def build():
        def bwd(g):
            return g, g

        return bwd

    return _record("add", out, (a, b), build)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _require_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def build():
        def bwd(g):
            return g, -g

        return bwd

    return _record("sub", out, (a, b), build)


def scale(x, factor):
    """Multiply by a python scalar constant."""
    x = _as_tensor(x)
    f = np.float32(factor)
    out = Tensor(x.data * f)

    def build():
        def bwd(g):
            return (g * f,)

        return bwd

    return _record("scale", out, (x,), build)


def clamp01(x):
    """Clamp to [0, 1]; gradient passes through inside the (closed) range."""
    x = _as_tensor(x)
    xd = x.data
    out = Tensor(np.clip(xd, 0.0, 1.0))

    def build():
        def bwd(g):
            return (g * ((xd >= 0.0) & (xd <= 1.0)),)

        return bwd

    return _record("clamp01", out, (x,), build)


def mse(out, gt):
    """Mean squared error with 1/(C*H*W) normalisation; float64 accumulation."""
    out, gt = _as_tensor(out), _as_tensor(gt)
    _require_same_shape("mse", out, gt)
    d = out.data - gt.data
    d64 = d.astype(np.float64).ravel()
    n = d.size
    val = np.dot(d64, d64) / n
    res = Tensor(np.float32(val))

    def build():
        coef = np.float32(2.0 / n)

        def bwd(g):
            gd = d * (coef * g.reshape(()))
            return gd, -gd

        return bwd

    return _record("mse", res, (out, gt), build)


# --------------------------------------------------------------------------
# resize (preprocessing helper, not differentiated)

def resize_bilinear(image, out_h, out_w):
    """Bilinear resample of a C x H x W float32 array (half-pixel centres).

    Plain-array helper used to build the analysis-resolution input for the
    weight generator; gradients never flow through it.
    """
    img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    if img.ndim != 3:
        raise ShapeError(f"resize_bilinear: expected C x H x W, got {tuple(img.shape)}")
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.minimum(ys.astype(np.int64), h - 2) if h > 1 else np.zeros(out_h, np.int64)
    x0 = np.minimum(xs.astype(np.int64), w - 2) if w > 1 else np.zeros(out_w, np.int64)
    fy = (ys - y0).astype(np.float32)[None, :, None]
    fx = (xs - x0).astype(np.float32)[None, None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    tl = img[:, y0[:, None], x0[None, :]]
    tr = img[:, y0[:, None], x1[None, :]]
    bl = img[:, y1[:, None], x0[None, :]]
    br = img[:, y1[:, None], x1[None, :]]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return (top + (bot - top) * fy).astype(np.float32)
