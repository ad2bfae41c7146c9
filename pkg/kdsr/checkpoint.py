"""
KDCK training checkpoints.

Layout (little-endian):

    "KDCK" | u32 version | 32-byte config hash | u32 epoch
    u32 count, then per parameter:  u32 len, utf-8 name, u32 ndim, u32 dims..., f8 values
    u32 count, then per Adam state: u32 len, utf-8 name, u64 step, u32 ndim, u32 dims...,
                                    f8 first moment, f8 second moment
    u32 len, utf-8 JSON (RNG states and report history)

A file is parsed completely before anything is applied, so a bad file leaves no partial state.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np

from kdsr.autograd import Array, Parameter
from kdsr.errors import CheckpointError, ShapeError
from kdsr.layers import Module
from kdsr.numerics import Adam
from kdsr.rng import get_state, set_state

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"KDCK"
CHECKPOINT_VERSION = 1
HASH_BYTES = 32


@dataclass
class AdamSnapshot:
    step: int
    first_moment: Array
    second_moment: Array


@dataclass
class Checkpoint:
    epoch: int
    config_hash: bytes
    params: dict[str, Array]
    adam: dict[str, AdamSnapshot]
    state: dict[str, Any] = field(default_factory=dict)


def capture(
    model: Module,
    optimizer: Adam,
    epoch: int,
    config_hash: bytes,
    rngs: dict[str, np.random.Generator],
    extra: dict[str, Any],
) -> Checkpoint:
    return Checkpoint(
        epoch=epoch,
        config_hash=config_hash,
        params={p.name: p.data.copy() for p in model.parameters()},
        adam={
            name: AdamSnapshot(s.step, s.first_moment.copy(), s.second_moment.copy())
            for name, s in optimizer.states.items()
        },
        state={"rng": {name: get_state(rng) for name, rng in rngs.items()}, **extra},
    )


def _check_parameters(ckpt: Checkpoint, model: Module) -> dict[str, Parameter]:
    params = {p.name: p for p in model.parameters()}
    missing = sorted(set(params) ^ set(ckpt.params))
    if missing:
        raise CheckpointError(f"checkpoint and model disagree on parameters: {missing}")
    for name, value in ckpt.params.items():
        expected = params[name].shape
        if value.shape != expected:
            raise ShapeError(f"{name}: checkpoint shape {value.shape} vs model {expected}")
    return params


def restore_parameters(ckpt: Checkpoint, model: Module) -> None:
    params = _check_parameters(ckpt, model)
    for name, value in ckpt.params.items():
        params[name].data[...] = value


def restore(
    ckpt: Checkpoint,
    model: Module,
    optimizer: Adam,
    rngs: dict[str, np.random.Generator],
) -> None:
    """Check every name and shape against the live objects, then copy everything in."""
    _check_parameters(ckpt, model)
    if set(ckpt.adam) != set(optimizer.states):
        raise CheckpointError("checkpoint optimizer state does not match the trainable parameters")
    rng_states = ckpt.state.get("rng", {})
    if set(rng_states) != set(rngs):
        raise CheckpointError(f"checkpoint RNG streams {sorted(rng_states)} vs {sorted(rngs)}")

    restore_parameters(ckpt, model)
    for name, snap in ckpt.adam.items():
        state = optimizer.states[name]
        state.step = snap.step
        state.first_moment[...] = snap.first_moment
        state.second_moment[...] = snap.second_moment
    for name, rng in rngs.items():
        set_state(rng, rng_states[name])


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_shape(shape: tuple[int, ...]) -> bytes:
    return struct.pack(f"<I{len(shape)}I", len(shape), *shape)


def _pack_values(values: Array) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    if len(ckpt.config_hash) != HASH_BYTES:
        raise CheckpointError("config hash must be 32 bytes")
    chunks = [
        struct.pack("<4sI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION),
        ckpt.config_hash,
        struct.pack("<II", ckpt.epoch, len(ckpt.params)),
    ]
    for name, value in ckpt.params.items():
        chunks += [_pack_name(name), _pack_shape(value.shape), _pack_values(value)]
    chunks.append(struct.pack("<I", len(ckpt.adam)))
    for name, snap in ckpt.adam.items():
        chunks += [
            _pack_name(name),
            struct.pack("<Q", snap.step),
            _pack_shape(snap.first_moment.shape),
            _pack_values(snap.first_moment),
            _pack_values(snap.second_moment),
        ]
    blob = json.dumps(ckpt.state, sort_keys=True).encode("utf-8")
    chunks += [struct.pack("<I", len(blob)), blob]

    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    with open(tmp, "wb") as file:
        for chunk in chunks:
            file.write(chunk)
    os.replace(tmp, target)
    logger.info("wrote checkpoint %s (epoch %d)", target, ckpt.epoch)


class _Reader:
    def __init__(self, raw: bytes, path: Union[str, Path]) -> None:
        self.raw = raw
        self.path = path
        self.offset = 0

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        values = struct.unpack_from(fmt, self.raw, self.offset)
        self.offset += size
        return values

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def name(self) -> str:
        (length,) = self.unpack("<I")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{self.path}: corrupt block name") from exc

    def shape(self) -> tuple[int, ...]:
        (ndim,) = self.unpack("<I")
        return tuple(int(d) for d in self.unpack(f"<{ndim}I"))

    def values(self, shape: tuple[int, ...]) -> Array:
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint {path} not found") from exc
    reader = _Reader(raw, path)

    magic, version = reader.unpack("<4sI")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config_hash = reader.take(HASH_BYTES)
    epoch, param_count = reader.unpack("<II")

    params: dict[str, Array] = {}
    for _ in range(param_count):
        name = reader.name()
        params[name] = reader.values(reader.shape())

    (adam_count,) = reader.unpack("<I")
    adam: dict[str, AdamSnapshot] = {}
    for _ in range(adam_count):
        name = reader.name()
        (step,) = reader.unpack("<Q")
        shape = reader.shape()
        first = reader.values(shape)
        adam[name] = AdamSnapshot(int(step), first, reader.values(shape))

    (blob_len,) = reader.unpack("<I")
    try:
        state = json.loads(reader.take(blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt state block") from exc
    if reader.offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - reader.offset} trailing bytes")

    return Checkpoint(epoch, config_hash, params, adam, state)
