"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic "GSG1" | u32 version
    u32 config length   | UTF-8 config snapshot (key = value lines)
    u32 rng length      | UTF-8 JSON of the numpy bit-generator state
    u32 vocab length    | UTF-8 vocab file body (one token per line)
    u32 tensor count
    per tensor: u16 name length | name UTF-8 | u8 rank | u32 dims... |
                float64 little-endian data

Round trips are bitwise exact, including the RNG state.  Unknown magic or
version is rejected.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import corpus as cp
from .config import TrainConfig, parse_config_text, config_to_text

MAGIC = b"GSG1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    vocab_text: str
    rng_state: dict
    tensors: dict[str, np.ndarray]

    @property
    def config(self) -> TrainConfig:
        return parse_config_text(self.config_text)

    @property
    def vocab(self) -> cp.Vocab:
        lines = [ln for ln in self.vocab_text.splitlines() if ln]
        if tuple(lines[:4]) != cp.SPECIALS:
            raise CheckpointError("checkpoint vocab lacks the special tokens")
        return cp.Vocab(lines[4:])

    def restored_rng(self) -> np.random.Generator:
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng_state
        return rng


def _pack_block(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def save_checkpoint(path, named_tensors, config: TrainConfig,
                    vocab: cp.Vocab, rng: np.random.Generator) -> None:
    """Write parameters plus the run state needed to reproduce continuation."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(_pack_block(config_to_text(config).encode("utf-8")))
    parts.append(_pack_block(
        json.dumps(rng.bit_generator.state, sort_keys=True).encode("utf-8")))
    parts.append(_pack_block(("\n".join(vocab.id_to_token) + "\n").encode("utf-8")))
    named_tensors = list(named_tensors)
    parts.append(struct.pack("<I", len(named_tensors)))
    for name, tensor in named_tensors:
        arr = np.ascontiguousarray(tensor.data, dtype="<f8")
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)) + name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    def block(self) -> bytes:
        return self.read(self.u32())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        reader = _Reader(f.read())
    if reader.read(4) != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} (expected {VERSION})")
    config_text = reader.block().decode("utf-8")
    rng_state = json.loads(reader.block().decode("utf-8"))
    vocab_text = reader.block().decode("utf-8")
    count = reader.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack("<H", reader.read(2))[0]
        name = reader.read(name_len).decode("utf-8")
        rank = struct.unpack("<B", reader.read(1))[0]
        dims = struct.unpack(f"<{rank}I", reader.read(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(reader.read(8 * size), dtype="<f8").reshape(dims)
        tensors[name] = np.array(data, dtype=np.float64)
    if reader.pos != len(reader.buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(config_text, vocab_text, rng_state, tensors)


def load_tensors_into(named_params, tensors: dict[str, np.ndarray]) -> None:
    """Copy checkpoint tensors into parameters, validating names and shapes."""
    names = [n for n, _ in named_params]
    missing = [n for n in names if n not in tensors]
    extra = [n for n in tensors if n not in names]
    if missing or extra:
        raise CheckpointError(
            f"tensor name mismatch (missing {missing}, unexpected {extra})")
    for name, param in named_params:
        arr = tensors[name]
        if arr.shape != param.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {arr.shape} vs {param.data.shape}")
        param.data = arr.copy()
        param.grad = None
