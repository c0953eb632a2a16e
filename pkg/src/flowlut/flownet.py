"""Iterative residual-flow refinement.

A 3-layer CNN (6->64->64->3, tanh output) predicts a bounded per-pixel
correction field from the current image and its residual against the
original input. K refinement steps each add 1/K of the predicted field,
so the total adjustment can never exceed 1 in magnitude and the whole
loop stays differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError, ShapeError
from .tensor import Tensor, add, concat_channels, conv2d, relu, scale, sub, tanh
from .weightnet import conv_uniform_init

__all__ = [
    "FlowNetParams",
    "RefinementTrace",
    "init_flow_net",
    "flownet_forward",
    "flownet_param_count",
    "refine",
]

DEFAULT_FLOW_WIDTH = 64


@dataclass
class FlowNetParams:
    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    conv3_w: Tensor
    conv3_b: Tensor

    def parameters(self):
        return [
            ("flow.conv1.w", self.conv1_w),
            ("flow.conv1.b", self.conv1_b),
            ("flow.conv2.w", self.conv2_w),
            ("flow.conv2.b", self.conv2_b),
            ("flow.conv3.w", self.conv3_w),
            ("flow.conv3.b", self.conv3_b),
        ]


@dataclass
class RefinementTrace:
    """Per-step diagnostics: (residual L2 norm, mean |correction|, image)."""

    steps: list = field(default_factory=list)

    def record(self, residual_norm, mean_abs_flow, image):
        self.steps.append((float(residual_norm), float(mean_abs_flow), image))

    def __len__(self):
        return len(self.steps)


def init_flow_net(rng, width=DEFAULT_FLOW_WIDTH):
    """conv1/conv2 uniform +-1/sqrt(fan_in); conv3 zero so refinement starts
    as the identity."""
    w1, b1 = conv_uniform_init(rng, width, 6)
    w2, b2 = conv_uniform_init(rng, width, width)
    return FlowNetParams(
        conv1_w=Tensor(w1, requires_grad=True, name="flow.conv1.w"),
        conv1_b=Tensor(b1, requires_grad=True, name="flow.conv1.b"),
        conv2_w=Tensor(w2, requires_grad=True, name="flow.conv2.w"),
        conv2_b=Tensor(b2, requires_grad=True, name="flow.conv2.b"),
        conv3_w=Tensor(np.zeros((3, width, 3, 3), np.float32), requires_grad=True,
                       name="flow.conv3.w"),
        conv3_b=Tensor(np.zeros(3, np.float32), requires_grad=True, name="flow.conv3.b"),
    )


def flownet_forward(params, x):
    """6 x H x W -> bounded 3 x H x W correction field in [-1, 1]."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.data.ndim != 3 or t.data.shape[0] != 6:
        raise ShapeError(
            f"flow net expects a 6-channel input (image ++ residual), got {tuple(t.data.shape)}"
        )
    h = relu(conv2d(t, params.conv1_w, params.conv1_b))
    h = relu(conv2d(h, params.conv2_w, params.conv2_b))
    return tanh(conv2d(h, params.conv3_w, params.conv3_b))


def flownet_param_count(params):
    return sum(p.data.size for _, p in params.parameters())


def refine(params, i_lut, i_in, k_steps, forward_fn=None):
    """Run k_steps of residual alignment starting from i_lut.

    Each step recomputes the residual against i_in, predicts a bounded
    correction field, and adds 1/k_steps of it. Intermediate images are
    not clamped; the caller clamps the final output. Returns the refined
    image (unclamped) and a RefinementTrace with exactly k_steps entries.

    `forward_fn` substitutes the prediction network (used by tests to
    inject stubs); it defaults to flownet_forward with `params`.
    """
    if k_steps < 1:
        raise GraphError(f"refinement needs at least one step, got {k_steps}")
    lut_t = i_lut if isinstance(i_lut, Tensor) else Tensor(i_lut)
    in_t = i_in if isinstance(i_in, Tensor) else Tensor(i_in)
    if lut_t.data.shape != in_t.data.shape:
        raise ShapeError(
            f"refine: image shapes differ: {tuple(lut_t.data.shape)} vs {tuple(in_t.data.shape)}"
        )
    if forward_fn is None:
        def forward_fn(x):
            return flownet_forward(params, x)
    trace = RefinementTrace()
    inv_k = 1.0 / k_steps
    current = lut_t
    for _ in range(k_steps):
        residual = sub(in_t, current)
        field_ = forward_fn(concat_channels(current, residual))
        current = add(current, scale(field_, inv_k))
        trace.record(
            np.linalg.norm(residual.data.astype(np.float64)),
            np.mean(np.abs(field_.data, dtype=np.float64)),
            current.data,
        )
    return current, trace
