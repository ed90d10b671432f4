"""TPRC binary checkpoint format.

Layout (little-endian)::

    b"TPRC" | u16 version | u8 variant bits | u8 g-activation | u8 frozen-embedding
    | 6 x u32 dims (d, m, k_v, k_S, V, d_emb) | u32 tensor count
    | per tensor, sorted by name: u16 name length, utf-8 name, u8 ndim,
      ndim x u32 extents, float64 data (row-major)
    | u32 CRC32 of everything above
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from . import tensor as T
from .captioner import Dims, Model, model_shapes
from .cell import VariantConfig

MAGIC = b"TPRC"
VERSION = 1
_ACTIVATIONS = ("sigmoid", "tanh")


class CheckpointError(ValueError):
    pass


class CorruptionError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ShapeError(CheckpointError):
    pass


def encode(model: Model) -> bytes:
    parts = [MAGIC, struct.pack("<HBBB", VERSION, model.config.flags(), _ACTIVATIONS.index(model.g_activation),
                                int(model.freeze_embedding))]
    parts.append(struct.pack("<6I", *model.dims.as_tuple()))
    names = sorted(model.params)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        arr = model.params[name].data
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_checkpoint(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(encode(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def decode(buf: bytes, expect_config: VariantConfig | None = None, expect_dims: Dims | None = None) -> Model:
    if len(buf) < len(MAGIC) + 4:
        raise CheckpointError("file too short for a checkpoint")
    payload, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(payload) != crc:
        raise CorruptionError("CRC32 mismatch: checkpoint is corrupted")
    r = _Reader(payload)
    if r.raw(4) != MAGIC:
        raise CheckpointError("not a TPRC checkpoint")
    version, bits, act, frozen = r.take("<HBBB")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    if act >= len(_ACTIVATIONS):
        raise CheckpointError(f"unknown gate activation code {act}")
    dims = Dims(*r.take("<6I"))
    config = VariantConfig.from_flags(bits)
    if expect_dims is not None and expect_dims != dims:
        raise ShapeError(f"checkpoint dimensions {dims} differ from expected {expect_dims}")
    (count,) = r.take("<I")
    params = {}
    for _ in range(count):
        (n,) = r.take("<H")
        name = r.raw(n).decode("utf-8")
        (ndim,) = r.take("<B")
        shape = r.take(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.raw(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = T.parameter(data, name)
    if r.pos != len(payload):
        raise CheckpointError("trailing bytes after tensor table")
    target = config if expect_config is None else expect_config
    expected = model_shapes(dims, target)
    for name in sorted(set(expected) | set(params)):
        if name not in params:
            raise ShapeError(f"tensor {name} required by variant {target.name} is missing")
        if name not in expected:
            raise ShapeError(f"tensor {name} is not part of variant {target.name}")
        if params[name].shape != expected[name]:
            raise ShapeError(f"tensor {name} has shape {params[name].shape}, expected {expected[name]}")
    model = Model(dims, config, params, _ACTIVATIONS[act], bool(frozen))
    model.xe_steps = 1  # a stored model counts as trained
    return model


def load_checkpoint(path: str | Path, expect_config: VariantConfig | None = None,
                    expect_dims: Dims | None = None) -> Model:
    return decode(Path(path).read_bytes(), expect_config, expect_dims)
