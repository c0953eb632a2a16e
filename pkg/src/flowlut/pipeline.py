"""End-to-end enhancement model: weight generation, LUT fusion, refinement.

Also exposes the composite loss, exact parameter accounting, and analytic
FLOP accounting per stage.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .errors import ShapeError, SizeError
from .luts import LutBank, blend_apply, init_specialized_luts
from .flownet import init_flow_net, refine
from .weightnet import init_weight_generator, weightgen_forward

__all__ = [
    "PipelineConfig",
    "FlowLut",
    "enhance",
    "enhance_with_trace",
    "total_loss",
    "count_params",
    "count_flops",
    "conv_flops",
]


@dataclass
class PipelineConfig:
    num_luts: int = 8
    lattice_size: int = 33
    flow_steps: int = 4
    head_hidden: int = 128
    backbone_widths: tuple = (64, 128, 256)
    flow_width: int = 64
    analysis_resolution: int = 256      # weight generator input edge; downsample-only
    processing_resolution: int = 0      # 0 = refine at native resolution
    lambda_perceptual: float = 0.1
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    specialized_init: bool = True

    def __post_init__(self):
        if self.num_luts < 1:
            raise SizeError(f"num_luts must be >= 1, got {self.num_luts}")
        if self.lattice_size < 2:
            raise SizeError(f"lattice_size must be >= 2, got {self.lattice_size}")
        if self.flow_steps < 1:
            raise SizeError(f"flow_steps must be >= 1, got {self.flow_steps}")
        if self.lr <= 0:
            raise SizeError(f"lr must be positive, got {self.lr}")
        if self.lambda_perceptual < 0:
            raise SizeError(f"lambda_perceptual must be >= 0, got {self.lambda_perceptual}")
        self.backbone_widths = tuple(int(w) for w in self.backbone_widths)
        self.betas = (float(self.betas[0]), float(self.betas[1]))

    def to_dict(self):
        d = asdict(self)
        d["backbone_widths"] = list(self.backbone_widths)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class FlowLut:
    """Trainable model bundle: LUT bank + weight generator + flow net."""

    def __init__(self, config: PipelineConfig, bank: LutBank, weight_params, flow_params):
        self.config = config
        self.bank = bank
        self.weight_params = weight_params
        self.flow_params = flow_params

    @classmethod
    def build(cls, config: PipelineConfig):
        """Deterministic construction from config.seed."""
        rng = np.random.default_rng(config.seed)
        bank = init_specialized_luts(
            config.num_luts, config.lattice_size, specialized=config.specialized_init
        )
        wparams = init_weight_generator(
            rng, num_luts=config.num_luts, widths=config.backbone_widths,
            hidden=config.head_hidden,
        )
        fparams = init_flow_net(rng, width=config.flow_width)
        return cls(config, bank, wparams, fparams)

    def parameters(self):
        out = [(l.table.name, l.table) for l in self.bank.luts]
        out.extend(self.weight_params.parameters())
        out.extend(self.flow_params.parameters())
        return out

    def zero_grad(self):
        for _, p in self.parameters():
            p.zero_grad()

    def fusion_weights(self, image):
        """Blend weights for a (3,H,W) array; uses the analysis downsample."""
        return weightgen_forward(self.weight_params, analysis_view(image, self.config))

    def enhance(self, image):
        return enhance(self, image)


def analysis_view(image, config):
    """Input to the weight generator: the image downsampled to the analysis
    resolution when it is larger; never upsampled (weights are global, and
    the downsample keeps the generator's cost resolution-independent)."""
    img = image.data if isinstance(image, T.Tensor) else np.asarray(image, np.float32)
    edge = config.analysis_resolution
    c, h, w = img.shape
    if edge and (h > edge or w > edge):
        return T.resize_bilinear(img, min(h, edge), min(w, edge))
    return img


def _check_image(image):
    img = image if isinstance(image, T.Tensor) else T.Tensor(image)
    if img.data.ndim != 3 or img.data.shape[0] != 3:
        raise ShapeError(f"expected a 3 x H x W image, got {tuple(img.data.shape)}")
    return img


def enhance_with_trace(model, image, flow_steps=None):
    """Full pipeline on one image; returns (clamped output, refinement trace).

    Differentiable end to end when called under an active Graph; the final
    clamp keeps the output in [0, 1].
    """
    cfg = model.config
    img = _check_image(image)
    k = flow_steps or cfg.flow_steps
    weights = weightgen_forward(model.weight_params, analysis_view(img, cfg))
    i_lut = blend_apply(model.bank, weights, img)
    proc = cfg.processing_resolution
    h, w = img.data.shape[1:]
    if proc and (h > proc or w > proc):
        # refine at reduced resolution, upsample only the net correction
        small_lut = T.Tensor(T.resize_bilinear(i_lut.data, min(h, proc), min(w, proc)))
        small_in = T.Tensor(T.resize_bilinear(img.data, min(h, proc), min(w, proc)))
        refined_small, trace = refine(model.flow_params, small_lut, small_in, k)
        correction = T.resize_bilinear(
            refined_small.data - small_lut.data, h, w
        )
        out = T.add(i_lut, T.Tensor(correction))
    else:
        out, trace = refine(model.flow_params, i_lut, img, k)
    return T.clamp01(out), trace


def enhance(model, image, flow_steps=None):
    out, _ = enhance_with_trace(model, image, flow_steps)
    return out


def total_loss(out, gt, perceptual=None, perceptual_weight=0.1):
    """Composite objective: pixel MSE plus an optional perceptual plug-in.

    `perceptual` is any callable (out, gt) -> scalar Tensor differentiable
    through the tape; with no plug-in the perceptual term is zero.
    """
    base = T.mse(out, gt)
    if perceptual is None:
        return base
    return T.add(base, T.scale(perceptual(out, gt), perceptual_weight))


# --------------------------------------------------------------------------
# accounting

def count_params(model):
    luts = sum(l.table.data.size for l in model.bank.luts)
    wnet = sum(p.data.size for _, p in model.weight_params.parameters())
    fnet = sum(p.data.size for _, p in model.flow_params.parameters())
    return {"luts": luts, "weight_net": wnet, "flow_net": fnet,
            "total": luts + wnet + fnet}


def conv_flops(c_in, c_out, h, w):
    """Multiply-add accounting for one 3x3 same-padding convolution."""
    return 2 * c_in * c_out * 9 * h * w


# per-pixel trilinear interpolation: 3 channels x (8 mult + 7 add) plus
# coordinate scale/floor/fraction math
TRILINEAR_FLOPS_PER_PIXEL = 3 * 15 + 6


def count_flops(model, h, w):
    """Analytic FLOP breakdown for enhancing one h x w image.

    Convolutions are 2*C_in*C_out*9*H*W at the resolution each layer
    actually runs at; the LUT stage is charged the 8-corner interpolation
    cost per pixel per bank member; GMACs are half the FLOPs.
    """
    cfg = model.config
    if h < 1 or w < 1:
        raise SizeError(f"image dims must be >= 1, got {h}x{w}")

    edge = cfg.analysis_resolution
    ah, aw = (min(h, edge), min(w, edge)) if edge else (h, w)
    c1, c2, c3 = cfg.backbone_widths
    layers = []
    plan = [(3, c1), (c1, c1), "pool", (c1, c2), (c2, c2), "pool", (c2, c3), (c3, c3)]
    hh, ww = ah, aw
    weight_net = 0
    for item in plan:
        if item == "pool":
            weight_net += 3 * hh * ww  # comparisons
            hh, ww = hh // 2, ww // 2
            continue
        ci, co = item
        f = conv_flops(ci, co, hh, ww)
        layers.append((f"weightgen conv {ci}->{co} @{hh}x{ww}", f))
        weight_net += f
    weight_net += c3 * hh * ww                       # global average pool
    weight_net += 2 * cfg.head_hidden * c3 + 2 * cfg.num_luts * cfg.head_hidden
    weight_net += 5 * cfg.num_luts                   # softmax

    lut_blend = TRILINEAR_FLOPS_PER_PIXEL * h * w * cfg.num_luts

    proc = cfg.processing_resolution
    ph, pw = (min(h, proc), min(w, proc)) if proc else (h, w)
    fw = cfg.flow_width
    per_step = (
        conv_flops(6, fw, ph, pw)
        + conv_flops(fw, fw, ph, pw)
        + conv_flops(fw, 3, ph, pw)
    )
    for ci, co in ((6, fw), (fw, fw), (fw, 3)):
        layers.append((f"flow conv {ci}->{co} @{ph}x{pw}", conv_flops(ci, co, ph, pw)))
    elementwise = cfg.flow_steps * (3 * ph * pw * 3)  # residual, scale, add
    flow_net = cfg.flow_steps * per_step

    total = weight_net + lut_blend + flow_net + elementwise
    return {
        "weight_net": weight_net,
        "lut_blend": lut_blend,
        "flow_net": flow_net,
        "elementwise": elementwise,
        "total": total,
        "gmacs": total / 2 / 1e9,
        "gflops": total / 1e9,
        "layers": layers,
    }
