"""Finite-difference validation of every analytic gradient path.

Analytic gradients come from the float32 tape. The central differences
(h = 1e-3) are evaluated on an independent float64 twin of the forward
pass, so the comparison is immune to single-precision forward noise and
simultaneously cross-checks the float32 forward itself. The effective
step used in each quotient is the actually-representable float32
difference, not the nominal 2h.

Groups: conv2d, linear, softmax-driven LUT blending, trilinear lattice
entries, K-step refinement (K = 1 and 4), and an end-to-end tiny model.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import luts as LU
from .flownet import FlowNetParams, init_flow_net, refine
from .weightnet import init_weight_generator, weightgen_forward

__all__ = ["GroupReport", "run_suite", "GROUPS", "corrupt_gradients"]

H_STEP = 1e-3


# --------------------------------------------------------------------------
# float64 twin of the forward operator set

def conv2d_64(x, w, b):
    c_in, h, wd = x.shape
    c_out = w.shape[0]
    xp = np.zeros((c_in, h + 2, wd + 2), np.float64)
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((c_in, 3, 3, h, wd), np.float64)
    for ky in range(3):
        for kx in range(3):
            cols[:, ky, kx] = xp[:, ky:ky + h, kx:kx + wd]
    y = w.reshape(c_out, -1).astype(np.float64) @ cols.reshape(c_in * 9, h * wd)
    return y.reshape(c_out, h, wd) + b.astype(np.float64)[:, None, None]


def maxpool2x2_64(x):
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, : h2 * 2, : w2 * 2].reshape(c, h2, 2, w2, 2).max(axis=(2, 4))


def linear_64(x, w, b):
    return w.astype(np.float64) @ x + b.astype(np.float64)


def softmax_64(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def trilinear_64(table, d, image):
    p = np.clip(image.reshape(3, -1), 0.0, 1.0) * (d - 1)
    i0 = np.minimum(p.astype(np.int64), d - 2)
    f = p - i0
    flat = table.astype(np.float64).reshape(d * d * d, 3)
    base = (i0[0] * d + i0[1]) * d + i0[2]
    out = np.zeros((p.shape[1], 3), np.float64)
    for dr in (0, 1):
        wr = f[0] if dr else 1.0 - f[0]
        for dg in (0, 1):
            wg = f[1] if dg else 1.0 - f[1]
            for db in (0, 1):
                wb = f[2] if db else 1.0 - f[2]
                out += (wr * wg * wb)[:, None] * flat[base + (dr * d + dg) * d + db]
    return out.T.reshape(image.shape)


def blend_64(tables, d, weights, image):
    out = np.zeros(image.shape, np.float64)
    for wi, tab in zip(weights, tables):
        out += wi * trilinear_64(tab, d, image)
    return out


def flownet_64(p: FlowNetParams, x):
    h = np.maximum(conv2d_64(x, p.conv1_w.data, p.conv1_b.data), 0.0)
    h = np.maximum(conv2d_64(h, p.conv2_w.data, p.conv2_b.data), 0.0)
    return np.tanh(conv2d_64(h, p.conv3_w.data, p.conv3_b.data))


def refine_64(p, i_lut, i_in, k):
    cur = i_lut.astype(np.float64)
    src = i_in.astype(np.float64)
    for _ in range(k):
        res = src - cur
        field = flownet_64(p, np.concatenate([cur, res], axis=0))
        cur = cur + field / k
    return cur


def weightgen_64(p, image):
    x = image.astype(np.float64)
    for i, (cw, cb) in enumerate(p.convs):
        x = np.maximum(conv2d_64(x, cw.data, cb.data), 0.0)
        if i in (1, 3):
            x = maxpool2x2_64(x)
    g = x.mean(axis=(1, 2))
    hdn = np.maximum(linear_64(g, p.fc1_w.data, p.fc1_b.data), 0.0)
    return softmax_64(linear_64(hdn, p.fc2_w.data, p.fc2_b.data))


def mse_64(a, b):
    d = (a.astype(np.float64) - b.astype(np.float64)).ravel()
    return float(d @ d) / d.size


# --------------------------------------------------------------------------
# check machinery

@dataclass
class GroupReport:
    name: str
    worst_rel: float = 0.0
    checks: int = 0
    skipped: int = 0
    failures: list = field(default_factory=list)

    def passed(self, tolerance):
        return self.worst_rel < tolerance and not self.failures and self.checks > 0


def _coords_to_check(grad, count):
    flat = np.abs(grad).reshape(-1)
    order = np.argsort(flat)[::-1]
    picked = list(order[:count])
    return picked


def _quotient(flat, idx, orig, h, loss64_fn):
    plus = np.float32(float(orig) + h)
    minus = np.float32(float(orig) - h)
    flat[idx] = plus
    lp = loss64_fn()
    flat[idx] = minus
    lm = loss64_fn()
    flat[idx] = orig
    return (lp - lm) / (float(plus) - float(minus))


def _check_param(report, name, param, analytic, loss64_fn, tolerance, coords=6):
    """Central differences on the float64 twin around the float32 values.

    Each coordinate is gated on stencil self-consistency: if the h and h/2
    quotients disagree, a ReLU/clamp kink sits inside the stencil and the
    difference quotient is not an estimate of the derivative, so the
    coordinate is skipped rather than compared against garbage.
    """
    gmax = float(np.max(np.abs(analytic))) if analytic.size else 0.0
    floor = max(1e-4 * gmax, 1e-9)
    flat = param.data.reshape(-1)
    base = loss64_fn()
    for idx in _coords_to_check(analytic, coords):
        a = float(analytic.reshape(-1)[idx])
        orig = flat[idx].copy()
        n = _quotient(flat, idx, orig, H_STEP, loss64_fn)
        n_fine = _quotient(flat, idx, orig, H_STEP / 5, loss64_fn)
        # one-sided quotients expose a kink sitting at the centre itself,
        # where even refined central stencils agree on the averaged slope
        plus = np.float32(float(orig) + H_STEP)
        minus = np.float32(float(orig) - H_STEP)
        flat[idx] = plus
        lp = loss64_fn()
        flat[idx] = minus
        lm = loss64_fn()
        flat[idx] = orig
        fd_f = (lp - base) / (float(plus) - float(orig))
        fd_b = (base - lm) / (float(orig) - float(minus))
        kinked = (
            abs(n - n_fine) > 3e-4 * max(abs(n), abs(n_fine), floor)
            or abs(fd_f - fd_b) > 0.15 * max(abs(fd_f), abs(fd_b), floor)
        )
        if kinked:
            report.skipped += 1
            continue
        rel = abs(a - n) / max(abs(a), abs(n), floor)
        report.checks += 1
        report.worst_rel = max(report.worst_rel, rel)
        if rel >= tolerance:
            report.failures.append((name, int(idx), a, n, rel))


def _analytic_grads(params, build_loss):
    for _, p in params:
        p.zero_grad()
    with T.Graph() as g:
        loss = build_loss()
    g.backward(loss)
    g.release()
    return {name: p.grad.copy() for name, p in params}


def _run_group(report, params, build_loss32, loss64_fn, tolerance, coords=6):
    grads = _analytic_grads(params, build_loss32)
    for name, p in params:
        _check_param(report, name, p, grads[name], loss64_fn, tolerance, coords)


# --------------------------------------------------------------------------
# groups

def _unit_image(rng, d, h, w, margin=0.06):
    """Pixels placed strictly inside interpolation cells so the h-step never
    crosses a lattice plane or the [0,1] clamp."""
    cell = rng.integers(0, d - 1, size=(3, h, w))
    frac = rng.uniform(margin, 1.0 - margin, size=(3, h, w))
    return ((cell + frac) / (d - 1)).astype(np.float32)


def _group_conv2d(seed, tolerance):
    rng = np.random.default_rng(seed)
    report = GroupReport("conv2d")
    x = T.Tensor(rng.uniform(-1, 1, (2, 4, 4)).astype(np.float32), requires_grad=True)
    w = T.Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)).astype(np.float32), requires_grad=True)
    b = T.Tensor(rng.uniform(-1, 1, 3).astype(np.float32), requires_grad=True)
    tgt = rng.uniform(-1, 1, (3, 4, 4)).astype(np.float32)
    params = [("x", x), ("w", w), ("b", b)]

    def loss32():
        return T.mse(T.relu(T.conv2d(x, w, b)), tgt)

    def loss64():
        return mse_64(np.maximum(conv2d_64(x.data, w.data, b.data), 0.0), tgt)

    _run_group(report, params, loss32, loss64, tolerance)
    return report


def _group_linear(seed, tolerance):
    rng = np.random.default_rng(seed)
    report = GroupReport("linear")
    x = T.Tensor(rng.uniform(-1, 1, 5).astype(np.float32), requires_grad=True)
    w = T.Tensor(rng.uniform(-1, 1, (4, 5)).astype(np.float32), requires_grad=True)
    b = T.Tensor(rng.uniform(-1, 1, 4).astype(np.float32), requires_grad=True)
    tgt = rng.uniform(-1, 1, 4).astype(np.float32)
    params = [("x", x), ("w", w), ("b", b)]

    def loss32():
        return T.mse(T.linear(x, w, b), tgt)

    def loss64():
        return mse_64(linear_64(x.data.astype(np.float64), w.data, b.data), tgt)

    _run_group(report, params, loss32, loss64, tolerance)
    return report


def _make_bank(rng, n, d):
    luts = []
    for i in range(n):
        table = rng.uniform(0, 1, (d, d, d, 3)).astype(np.float32)
        luts.append(LU.Lut3D(size=d, table=T.Tensor(table, requires_grad=True,
                                                    name=f"lut{i}"), name=f"lut{i}"))
    return LU.LutBank(luts=luts)


def _group_softmax_blend(seed, tolerance):
    rng = np.random.default_rng(seed)
    report = GroupReport("softmax-blend")
    d, n = 4, 3
    bank = _make_bank(rng, n, d)
    logits = T.Tensor(rng.uniform(-1, 1, n).astype(np.float32), requires_grad=True)
    img = T.Tensor(_unit_image(rng, d, 3, 3), requires_grad=True)
    tgt = rng.uniform(0, 1, (3, 3, 3)).astype(np.float32)
    params = [("logits", logits), ("lut0", bank.luts[0].table),
              ("lut2", bank.luts[2].table), ("image", img)]
    tables = [l.table for l in bank.luts]

    def loss32():
        return T.mse(LU.blend_apply(bank, T.softmax(logits), img), tgt)

    def loss64():
        w = softmax_64(logits.data.astype(np.float64))
        out = blend_64([t.data for t in tables], d, w, img.data.astype(np.float64))
        return mse_64(out, tgt)

    _run_group(report, params, loss32, loss64, tolerance)
    return report


def _group_trilinear(seed, tolerance):
    rng = np.random.default_rng(seed)
    report = GroupReport("trilinear-lattice")
    d = 5
    table = T.Tensor(rng.uniform(0, 1, (d, d, d, 3)).astype(np.float32),
                     requires_grad=True)
    lut = LU.Lut3D(size=d, table=table, name="random")
    img = T.Tensor(_unit_image(rng, d, 4, 4), requires_grad=True)
    tgt = rng.uniform(0, 1, (3, 4, 4)).astype(np.float32)
    params = [("lattice", table), ("image", img)]

    def loss32():
        return T.mse(LU.trilinear_apply(lut, img), tgt)

    def loss64():
        return mse_64(trilinear_64(table.data, d, img.data.astype(np.float64)), tgt)

    _run_group(report, params, loss32, loss64, tolerance, coords=8)
    return report


def _group_refine(seed, tolerance, k):
    rng = np.random.default_rng(seed)
    report = GroupReport(f"refine-k{k}")
    fparams = init_flow_net(rng, width=4)
    fparams.conv3_w.data[...] = rng.uniform(-0.3, 0.3, fparams.conv3_w.data.shape)
    fparams.conv3_b.data[...] = rng.uniform(-0.1, 0.1, fparams.conv3_b.data.shape)
    i_lut = T.Tensor(rng.uniform(0.1, 0.9, (3, 4, 4)).astype(np.float32),
                     requires_grad=True, name="i_lut")
    i_in = rng.uniform(0.1, 0.9, (3, 4, 4)).astype(np.float32)
    tgt = rng.uniform(0, 1, (3, 4, 4)).astype(np.float32)
    params = fparams.parameters() + [("i_lut", i_lut)]

    def loss32():
        out, _ = refine(fparams, i_lut, i_in, k)
        return T.mse(out, tgt)

    def loss64():
        return mse_64(refine_64(fparams, i_lut.data, i_in, k), tgt)

    _run_group(report, params, loss32, loss64, tolerance, coords=4)
    return report


def _group_end_to_end(seed, tolerance):
    """Tiny full pipeline: blend weights from the generator, LUT fusion,
    K=2 refinement, MSE; samples >= 50 parameters across all components."""
    rng = np.random.default_rng(seed)
    report = GroupReport("end-to-end")
    d, n = 4, 3
    bank = _make_bank(rng, n, d)
    wg = init_weight_generator(rng, num_luts=n, widths=(2, 3, 4), hidden=4)
    wg.fc2_w.data[...] = rng.uniform(-0.5, 0.5, wg.fc2_w.data.shape)
    fp = init_flow_net(rng, width=4)
    fp.conv3_w.data[...] = rng.uniform(-0.2, 0.2, fp.conv3_w.data.shape)
    img = _unit_image(rng, d, 8, 8)
    tgt = rng.uniform(0, 1, (3, 8, 8)).astype(np.float32)
    k = 2
    params = (
        [(f"lut{i}", bank.luts[i].table) for i in range(n)]
        + wg.parameters()
        + fp.parameters()
    )
    tables = [l.table for l in bank.luts]

    def loss32():
        w = weightgen_forward(wg, img)
        i_lut = LU.blend_apply(bank, w, img)
        out, _ = refine(fp, i_lut, T.Tensor(img), k)
        return T.mse(T.clamp01(out), tgt)

    def loss64():
        w = weightgen_64(wg, img)
        i_lut = blend_64([t.data for t in tables], d, w, img.astype(np.float64))
        out = refine_64(fp, i_lut, img, k)
        return mse_64(np.clip(out, 0.0, 1.0), tgt)

    _run_group(report, params, loss32, loss64, tolerance, coords=2)
    return report


GROUPS = {
    "conv2d": _group_conv2d,
    "linear": _group_linear,
    "softmax-blend": _group_softmax_blend,
    "trilinear-lattice": _group_trilinear,
    "refine-k1": lambda s, t: _group_refine(s, t, 1),
    "refine-k4": lambda s, t: _group_refine(s, t, 4),
    "end-to-end": _group_end_to_end,
}


def run_suite(seed=0, tolerance=1e-3, seeds_per_group=None):
    """Run every group; returns {group: GroupReport} with merged seeds."""
    counts = {"conv2d": 20, "linear": 20, "softmax-blend": 8, "trilinear-lattice": 20,
              "refine-k1": 4, "refine-k4": 4, "end-to-end": 2}
    out = {}
    for name, fn in GROUPS.items():
        nseeds = seeds_per_group or counts[name]
        merged = GroupReport(name)
        for s in range(nseeds):
            rep = fn(seed * 1000 + s, tolerance)
            merged.checks += rep.checks
            merged.skipped += rep.skipped
            merged.worst_rel = max(merged.worst_rel, rep.worst_rel)
            merged.failures.extend(rep.failures)
        out[name] = merged
    return out


@contextlib.contextmanager
def corrupt_gradients(op_name, factor=1.5):
    """Test hook: scales every gradient leaving nodes of `op_name` during
    backward, to prove the checker catches broken analytic gradients."""

    def hook(op, grads):
        if op != op_name:
            return grads
        return tuple(None if g is None else g * np.float32(factor) for g in grads)

    prev = T._GRAD_HOOK
    T._GRAD_HOOK = hook
    try:
        yield
    finally:
        T._GRAD_HOOK = prev
