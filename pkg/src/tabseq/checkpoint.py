"""Versioned little-endian binary checkpoints with a trailing SHA-256 checksum.

Layout::

    magic (8 bytes) | version u32 | n_config u32 | (key, value) strings
    | n_tensors u32 | per tensor: name, dtype u8, ndim u32, dims u32*, data
    | sha256 of everything above (32 bytes)

Strings are a u32 byte length followed by UTF-8 bytes.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptFile, VersionMismatch
from .model import ModelConfig, TableSeq2Seq

MAGIC = b"TSEQCKPT"
FORMAT_VERSION = 1
_DTYPES = {0: (torch.float32, "<f4"), 1: (torch.float64, "<f8")}
_CODES = {torch.float32: 0, torch.float64: 1}


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def dumps_checkpoint(model: TableSeq2Seq, config: ModelConfig | None = None) -> bytes:
    config = config or model.config
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    items = sorted(config.to_dict().items())
    parts.append(struct.pack("<I", len(items)))
    for k, v in items:
        parts += [_pack_str(k), _pack_str(repr(v))]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name in sorted(state):
        t = state[name].detach().cpu().contiguous()
        code = _CODES[t.dtype]
        parts += [_pack_str(name), struct.pack("<BI", code, t.dim())]
        parts.append(struct.pack(f"<{t.dim()}I", *t.shape))
        parts.append(t.numpy().astype(_DTYPES[code][1], copy=False).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: TableSeq2Seq, config: ModelConfig | None, path) -> None:
    data = dumps_checkpoint(model, config)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFile("checkpoint ends unexpectedly")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptFile("invalid string in checkpoint") from None


def loads_checkpoint(data: bytes) -> tuple[TableSeq2Seq, ModelConfig]:
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise CorruptFile("not a tabseq checkpoint")
    (version,) = struct.unpack("<I", data[len(MAGIC) : len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, expected {FORMAT_VERSION}")
    if len(data) < len(MAGIC) + 4 + 32:
        raise CorruptFile("checkpoint truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile("checksum mismatch")
    r = _Reader(body)
    r.pos = len(MAGIC) + 4
    (n_cfg,) = r.unpack("<I")
    raw = {}
    for _ in range(n_cfg):
        k = r.string()
        raw[k] = r.string()
    config = ModelConfig.from_dict(raw)
    (n_t,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_t):
        name = r.string()
        code, ndim = r.unpack("<BI")
        if code not in _DTYPES:
            raise CorruptFile(f"unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        dtype, np_dtype = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        buf = r.take(count * np.dtype(np_dtype).itemsize)
        arr = np.frombuffer(buf, dtype=np_dtype).reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np_dtype, copy=True))
    if r.pos != len(body):
        raise CorruptFile("trailing bytes before checksum")
    model = TableSeq2Seq(config)
    dtype = next(iter(tensors.values())).dtype if tensors else torch.float32
    model = model.to(dtype)
    try:
        model.load_state_dict(tensors, strict=True)
    except RuntimeError as exc:
        raise CorruptFile(f"tensor set does not match the config: {exc}") from None
    return model, config


def load_checkpoint(path) -> tuple[TableSeq2Seq, ModelConfig]:
    try:
        data = Path(path).read_bytes()
    except OSError:
        raise
    return loads_checkpoint(data)
