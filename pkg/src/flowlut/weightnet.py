"""Content-aware fusion-weight generator.

Three conv blocks (two 3x3 conv+ReLU each; 2x2 max-pool after the first
two blocks only, so the third block's features keep H/4 x W/4), global
average pooling to a channel descriptor, then a two-layer head whose
softmax output is the per-LUT blend weight vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizeError
from .tensor import (
    Tensor,
    conv2d,
    global_avg_pool,
    linear,
    maxpool2x2,
    relu,
    softmax,
)

__all__ = [
    "WeightGeneratorParams",
    "init_weight_generator",
    "weightgen_forward",
    "weightgen_param_count",
    "conv_uniform_init",
]

# (C_in, C_out) per conv layer; blocks are consecutive pairs
DEFAULT_WIDTHS = (64, 128, 256)
DEFAULT_HIDDEN = 128


@dataclass
class WeightGeneratorParams:
    convs: list          # six (weight, bias) Tensor pairs
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    hidden: int
    num_weights: int

    def parameters(self):
        out = []
        for i, (w, b) in enumerate(self.convs, start=1):
            out.append((f"wg.conv{i}.w", w))
            out.append((f"wg.conv{i}.b", b))
        out.extend(
            [
                ("wg.fc1.w", self.fc1_w),
                ("wg.fc1.b", self.fc1_b),
                ("wg.fc2.w", self.fc2_w),
                ("wg.fc2.b", self.fc2_b),
            ]
        )
        return out


def conv_uniform_init(rng, c_out, c_in):
    """Uniform +-1/sqrt(fan_in) conv kernel and zero bias."""
    bound = 1.0 / np.sqrt(c_in * 9)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)).astype(np.float32)
    return w, np.zeros(c_out, dtype=np.float32)


def init_weight_generator(rng, num_luts=8, widths=DEFAULT_WIDTHS, hidden=DEFAULT_HIDDEN):
    """Draws conv/head weights from `rng` in a fixed order. The final head
    layer is zero-initialised so an untrained model blends uniformly."""
    c1, c2, c3 = widths
    plan = [(3, c1), (c1, c1), (c1, c2), (c2, c2), (c2, c3), (c3, c3)]
    convs = []
    for i, (ci, co) in enumerate(plan, start=1):
        w, b = conv_uniform_init(rng, co, ci)
        convs.append(
            (
                Tensor(w, requires_grad=True, name=f"wg.conv{i}.w"),
                Tensor(b, requires_grad=True, name=f"wg.conv{i}.b"),
            )
        )
    bound = 1.0 / np.sqrt(c3)
    fc1_w = rng.uniform(-bound, bound, size=(hidden, c3)).astype(np.float32)
    fc1_b = np.zeros(hidden, dtype=np.float32)
    return WeightGeneratorParams(
        convs=convs,
        fc1_w=Tensor(fc1_w, requires_grad=True, name="wg.fc1.w"),
        fc1_b=Tensor(fc1_b, requires_grad=True, name="wg.fc1.b"),
        fc2_w=Tensor(np.zeros((num_luts, hidden), np.float32), requires_grad=True, name="wg.fc2.w"),
        fc2_b=Tensor(np.zeros(num_luts, np.float32), requires_grad=True, name="wg.fc2.b"),
        hidden=hidden,
        num_weights=num_luts,
    )


def weightgen_forward(params, image):
    """Image (3 x H x W, H,W >= 8) -> probability vector over the bank."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.data.ndim != 3 or x.data.shape[0] != 3:
        raise SizeError(f"weight generator expects 3 x H x W input, got {tuple(x.data.shape)}")
    h, w = x.data.shape[1:]
    if h < 8 or w < 8:
        raise SizeError(f"weight generator needs at least 8x8 input, got {h}x{w}")
    for i, (cw, cb) in enumerate(params.convs):
        x = relu(conv2d(x, cw, cb))
        if i in (1, 3):  # pool closes blocks 1 and 2; block 3 stays pre-pool
            x = maxpool2x2(x)
    g = global_avg_pool(x)
    hdn = relu(linear(g, params.fc1_w, params.fc1_b))
    return softmax(linear(hdn, params.fc2_w, params.fc2_b))


def weightgen_param_count(params):
    total = 0
    for w, b in params.convs:
        total += w.data.size + b.data.size
    total += params.fc1_w.data.size + params.fc1_b.data.size
    total += params.fc2_w.data.size + params.fc2_b.data.size
    return total
