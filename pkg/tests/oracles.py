"""Independent reference implementations used to pin expected values.

Everything here is deliberately naive (explicit loops, float64) and shares
no code with the package under test.
"""

import math

import numpy as np


def conv2d_loops(x, w, b):
    """Six nested loops, zero padding, stride 1, 3x3 kernel, float64."""
    c_in, h, wd = x.shape
    c_out = w.shape[0]
    out = np.zeros((c_out, h, wd), dtype=np.float64)
    for co in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = float(b[co])
                for ci in range(c_in):
                    for ky in range(3):
                        for kx in range(3):
                            yy = i + ky - 1
                            xx = j + kx - 1
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += float(w[co, ci, ky, kx]) * float(x[ci, yy, xx])
                out[co, i, j] = acc
    return out


def maxpool2x2_loops(x):
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    out = np.empty((c, h2, w2), dtype=np.float64)
    for ci in range(c):
        for i in range(h2):
            for j in range(w2):
                out[ci, i, j] = max(
                    x[ci, 2 * i, 2 * j],
                    x[ci, 2 * i, 2 * j + 1],
                    x[ci, 2 * i + 1, 2 * j],
                    x[ci, 2 * i + 1, 2 * j + 1],
                )
    return out


def global_avg_pool_loops(x):
    c, h, w = x.shape
    out = np.zeros(c, dtype=np.float64)
    for ci in range(c):
        s = 0.0
        for i in range(h):
            for j in range(w):
                s += float(x[ci, i, j])
        out[ci] = s / (h * w)
    return out


def linear_loops(x, w, b):
    n, m = w.shape
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        s = float(b[i])
        for j in range(m):
            s += float(w[i, j]) * float(x[j])
        out[i] = s
    return out


def softmax_loops(x):
    mx = max(float(v) for v in x)
    exps = [math.exp(float(v) - mx) for v in x]
    total = sum(exps)
    return np.array([e / total for e in exps], dtype=np.float64)


def mse_loops(a, b):
    d = 0.0
    for u, v in zip(np.ravel(a), np.ravel(b)):
        d += (float(u) - float(v)) ** 2
    return d / np.size(a)


def trilinear_point(table, d, p):
    """Scalar 8-corner interpolation of one RGB coordinate p in [0,1]^3."""
    out = np.zeros(3, dtype=np.float64)
    idx = []
    frac = []
    for comp in p:
        scaled = min(max(float(comp), 0.0), 1.0) * (d - 1)
        i0 = min(int(math.floor(scaled)), d - 2)
        idx.append(i0)
        frac.append(scaled - i0)
    fr, fg, fb = frac
    for dr in (0, 1):
        wr = fr if dr else 1.0 - fr
        for dg in (0, 1):
            wg = fg if dg else 1.0 - fg
            for db in (0, 1):
                wb = fb if db else 1.0 - fb
                corner = table[idx[0] + dr, idx[1] + dg, idx[2] + db]
                out += wr * wg * wb * np.asarray(corner, dtype=np.float64)
    return out


def trilinear_image_loops(table, d, image):
    c, h, w = image.shape
    out = np.empty((3, h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            out[:, i, j] = trilinear_point(table, d, image[:, i, j])
    return out


def adamw_scalar_steps(theta, grads, lr, beta1, beta2, eps, weight_decay):
    """Reference AdamW on one scalar parameter over a list of gradients."""
    m = 0.0
    v = 0.0
    t = 0
    for g in grads:
        t += 1
        theta *= 1.0 - lr * weight_decay
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        theta -= lr * mhat / (math.sqrt(vhat) + eps)
    return theta


def central_difference(f, theta, h=1e-3):
    """Central finite difference of a scalar function at one coordinate."""
    return (f(theta + h) - f(theta - h)) / (2.0 * h)
