"""AdamW optimiser, training loop, and synthetic paired-data generation.

Batches are processed as loops over samples: each sample runs its own
forward/backward pass and gradients accumulate (scaled by 1/batch) in a
fixed order, which keeps training bit-deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import TrainingError
from .pipeline import enhance, total_loss

__all__ = [
    "OptimizerState",
    "adamw_step",
    "train",
    "DistortionParams",
    "make_synthetic_pair",
]


@dataclass
class OptimizerState:
    """Per-parameter first/second moments plus the global step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params):
        state = cls()
        for name, p in params:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adamw_step(params, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
    """One decoupled-weight-decay Adam update over named (name, Tensor) pairs.

    Decay is applied to the parameter first (theta *= 1 - lr*wd), then the
    bias-corrected moment update. Missing .grad counts as a zero gradient.
    """
    b1, b2 = betas
    state.t += 1
    t = state.t
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if weight_decay:
            p.data *= np.float32(1.0 - lr * weight_decay)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= np.float32(lr) * update
    return state


def train(model, dataset, config, perceptual=None, on_epoch=None):
    """Optimise all trainables (lattices + both networks) jointly.

    dataset: list of (input, target) arrays, each 3 x H x W in [0, 1].
    Returns (model, state, loss_rows) where loss_rows is [(step, loss), ...]
    with the batch-mean loss at every optimiser step. Deterministic for a
    fixed config.seed and dataset order.
    """
    if not dataset:
        raise TrainingError("training needs a non-empty dataset")
    params = model.parameters()
    state = OptimizerState.for_params(params)
    bs = max(1, config.batch_size)
    batches = [dataset[i:i + bs] for i in range(0, len(dataset), bs)]
    loss_rows = []
    step = 0
    for epoch in range(config.epochs):
        epoch_losses = []
        for batch in batches:
            for _, p in params:
                p.zero_grad()
            batch_loss = 0.0
            for x, gt in batch:
                with T.Graph() as g:
                    out = enhance(model, x)
                    loss = total_loss(out, T.Tensor(gt), perceptual,
                                      config.lambda_perceptual)
                val = loss.item()
                if not np.isfinite(val):
                    raise TrainingError(f"non-finite loss at step {step}")
                g.backward(loss, seed=1.0 / len(batch))
                g.release()
                batch_loss += val / len(batch)
            adamw_step(params, state, config.lr, config.betas,
                       weight_decay=config.weight_decay)
            step += 1
            loss_rows.append((step, batch_loss))
            epoch_losses.append(batch_loss)
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(epoch_losses)))
    return model, state, loss_rows


# --------------------------------------------------------------------------
# synthetic data: a global colour cast a LUT can fix plus a radial vignette
# only the spatial refiner can fix

@dataclass
class DistortionParams:
    gamma: tuple = (1.0, 1.0, 1.0)
    gains: tuple = (1.0, 1.0, 1.0)
    brightness: float = 0.0
    vignette: float = 0.0

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def sample(cls, rng):
        return cls(
            gamma=tuple(rng.uniform(0.87, 1.15, 3)),
            gains=tuple(rng.uniform(0.92, 1.08, 3)),
            brightness=float(rng.uniform(-0.04, 0.04)),
            vignette=float(rng.uniform(0.04, 0.12)),
        )


def apply_distortion(clean, params):
    """Degrade a clean image: per-channel gamma/gain, brightness shift, and
    a radial vignette gain; result clamped to [0, 1]."""
    c, h, w = clean.shape
    out = clean.astype(np.float64)
    for ch in range(3):
        out[ch] = np.power(np.clip(out[ch], 0.0, 1.0), params.gamma[ch]) * params.gains[ch]
    out += params.brightness
    if params.vignette:
        ys = (np.arange(h) - (h - 1) / 2) / max((h - 1) / 2, 1)
        xs = (np.arange(w) - (w - 1) / 2) / max((w - 1) / 2, 1)
        r2 = (ys[:, None] ** 2 + xs[None, :] ** 2) / 2.0  # 1.0 at the corners
        out *= 1.0 - params.vignette * r2
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _smooth_field(rng, h, w):
    """Sum of low-frequency sinusoids, mapped into a mid-range band."""
    ys = np.linspace(0.0, 1.0, h)[:, None]
    xs = np.linspace(0.0, 1.0, w)[None, :]
    acc = np.zeros((h, w), dtype=np.float64)
    for _ in range(3):
        fy, fx = rng.uniform(0.3, 1.6, 2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.4, 1.0)
        acc += amp * np.sin(2.0 * np.pi * (fy * ys + fx * xs) + phase)
    span = np.max(np.abs(acc)) or 1.0
    return 0.5 + 0.32 * acc / span


def make_synthetic_pair(seed, h, w):
    """Deterministic (degraded, clean) pair at h x w; both in [0, 1]."""
    if h < 8 or w < 8:
        raise TrainingError(f"synthetic pairs need at least 8x8, got {h}x{w}")
    rng = np.random.default_rng(seed)
    clean = np.stack([_smooth_field(rng, h, w) for _ in range(3)]).astype(np.float32)
    degraded = apply_distortion(clean, DistortionParams.sample(rng))
    return degraded, clean
