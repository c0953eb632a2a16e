"""Sectioned binary checkpoint format (magic ``FLUT``, version 1).

Layout, all little-endian:

    magic   4 bytes  b"FLUT"
    version 1 byte   0x01
    config  u32 length, then JSON (config dict + LUT names)
    params  u32 count, then per parameter:
              u16 name length + UTF-8 name
              u8 ndim, ndim x u32 extents
              raw float32 data
    opt     u8 present flag; when set: u64 step count, then per parameter
            (same order as above) the first- and second-moment buffers

Round-trips are bit-exact; truncation and version mismatches raise
CheckpointError naming the incomplete section.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .pipeline import FlowLut, PipelineConfig
from .training import OptimizerState

__all__ = ["MAGIC", "VERSION", "save_checkpoint", "load_checkpoint"]

MAGIC = b"FLUT"
VERSION = 1


def _param_bytes(arr):
    return arr.astype("<f4", copy=False).tobytes()


def save_checkpoint(model, path, state=None):
    cfg = model.config.to_dict()
    header = {"config": cfg, "lut_names": model.bank.names}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    params = model.parameters()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", VERSION)
    out += struct.pack("<I", len(blob))
    out += blob
    out += struct.pack("<I", len(params))
    for name, p in params:
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        shape = p.data.shape
        out += struct.pack("<B", len(shape))
        out += struct.pack(f"<{len(shape)}I", *shape)
        out += _param_bytes(p.data)
    if state is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<B", 1)
        out += struct.pack("<Q", state.t)
        for name, p in params:
            out += _param_bytes(state.m[name])
            out += _param_bytes(state.v[name])
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.section = "header"

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"checkpoint truncated in {self.section} section "
                f"(needed {n} bytes at offset {self.pos}, file has {len(self.data)})"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Returns (model, optimizer_state_or_None)."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint file")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} (expected {VERSION})"
        )
    r.section = "config"
    (blob_len,) = r.unpack("<I")
    try:
        header = json.loads(r.take(blob_len).decode("utf-8"))
        config = PipelineConfig.from_dict(header["config"])
        lut_names = header["lut_names"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed config section: {exc}")
    model = FlowLut.build(config)
    for lut, name in zip(model.bank.luts, lut_names):
        lut.name = name
    params = model.parameters()
    r.section = "params"
    (count,) = r.unpack("<I")
    if count != len(params):
        raise CheckpointError(
            f"{path}: checkpoint has {count} parameters, model expects {len(params)}"
        )
    by_name = dict(params)
    order = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        if name not in by_name:
            raise CheckpointError(f"{path}: unknown parameter {name!r}")
        p = by_name[name]
        if tuple(p.data.shape) != tuple(shape):
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {shape}, expected {tuple(p.data.shape)}"
            )
        n = int(np.prod(shape)) if shape else 1
        raw = r.take(4 * n)
        p.data = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape).copy()
        order.append((name, p))
    r.section = "optimizer"
    (present,) = r.unpack("<B")
    state = None
    if present:
        (t,) = r.unpack("<Q")
        state = OptimizerState(t=t)
        for name, p in order:
            n = p.data.size
            state.m[name] = np.frombuffer(r.take(4 * n), "<f4").reshape(p.data.shape).copy()
            state.v[name] = np.frombuffer(r.take(4 * n), "<f4").reshape(p.data.shape).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes after optimizer section")
    return model, state
