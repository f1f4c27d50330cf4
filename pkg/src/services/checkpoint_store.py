"""
BNCK checkpoints (little-endian):

    b"BNCK" | u32 version | u32 metadata length | metadata JSON (UTF-8)
    u32 entry count
    per entry: u32 name length | name | u32 dtype code | u32 ndim | ndim x u64 extents
               | u64 payload offset | u64 payload length
    payloads (offsets relative to the start of this section)
"""
import json
import logging
import os
from typing import Dict, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError

from src.domain.errors import CheckpointFormatError
from src.domain.event import EventType
from src.engine.core.types import DType
from src.infrastructure.atomic_file import atomic_write
from src.infrastructure.event_bus import publish
from src.infrastructure.rng import SeedStreams
from src.models.segnet import SPEC_ID, NetworkSpec, ToyUNet

logger = logging.getLogger(__name__)

MAGIC = b"BNCK"
VERSION = 1

Phase = Literal["pretrained", "adapted"]


class CheckpointMeta(BaseModel):
    spec_id: str = SPEC_ID
    phase: Phase
    seed: int
    iterations_source: int
    iterations_target: int
    in_channels: int
    num_classes: int
    image_size: int = 64
    eps: float
    dtype: Literal["f64", "f32"]


def _u32(value: int) -> bytes:
    return np.array([value], dtype="<u4").tobytes()


def _u64s(values) -> bytes:
    return np.array(list(values), dtype="<u8").tobytes()


def encode_checkpoint(meta: CheckpointMeta, arrays: Dict[str, np.ndarray]) -> bytes:
    meta_blob = json.dumps(meta.model_dump(), sort_keys=True).encode("utf-8")
    directory, payloads = [], []
    offset = 0
    for name, array in arrays.items():
        array = np.asarray(array)
        dtype = DType.from_numpy(array.dtype)
        payload = np.ascontiguousarray(array, dtype=dtype.numpy).tobytes()
        name_blob = name.encode("utf-8")
        directory.append(
            _u32(len(name_blob)) + name_blob + _u32(dtype.code) + _u32(array.ndim)
            + _u64s(array.shape) + _u64s([offset, len(payload)])
        )
        payloads.append(payload)
        offset += len(payload)
    header = MAGIC + _u32(VERSION) + _u32(len(meta_blob)) + meta_blob + _u32(len(arrays))
    return header + b"".join(directory) + b"".join(payloads)


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob = blob
        self.source = source
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"{self.source}: truncated {what}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return int(np.frombuffer(self.take(4, what), dtype="<u4")[0])

    def u64s(self, count: int, what: str) -> Tuple[int, ...]:
        return tuple(int(v) for v in np.frombuffer(self.take(8 * count, what), dtype="<u8"))


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Tuple[CheckpointMeta, Dict[str, np.ndarray]]:
    reader = _Reader(blob, source)
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {blob[:4]!r}")
    reader.pos = 4
    version = reader.u32("version")
    if version != VERSION:
        raise CheckpointFormatError(f"{source}: unsupported version {version}")
    meta_blob = reader.take(reader.u32("metadata length"), "metadata")
    try:
        meta = CheckpointMeta(**json.loads(meta_blob.decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError, TypeError) as e:
        raise CheckpointFormatError(f"{source}: invalid metadata: {e}") from e

    entries = []
    for _ in range(reader.u32("entry count")):
        name = reader.take(reader.u32("entry name length"), "entry name").decode("utf-8")
        code = reader.u32("dtype code")
        try:
            dtype = DType.from_code(code)
        except ValueError as e:
            raise CheckpointFormatError(f"{source}: entry '{name}': {e}") from e
        shape = reader.u64s(reader.u32("ndim"), "extents")
        offset, length = reader.u64s(2, "payload location")
        entries.append((name, dtype, shape, offset, length))

    payload_start = reader.pos
    arrays: Dict[str, np.ndarray] = {}
    for name, dtype, shape, offset, length in entries:
        expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype.numpy).itemsize
        if length != expected:
            raise CheckpointFormatError(f"{source}: entry '{name}' has {length} bytes, expected {expected}")
        start = payload_start + offset
        if start + length > len(blob):
            raise CheckpointFormatError(f"{source}: truncated payload for '{name}'")
        raw = np.frombuffer(blob[start:start + length], dtype=dtype.numpy)
        arrays[name] = raw.astype(raw.dtype.newbyteorder("=")).reshape(shape)
    end = payload_start + max((offset + length for _, _, _, offset, length in entries), default=0)
    if end != len(blob):
        raise CheckpointFormatError(f"{source}: {len(blob) - end} trailing bytes after the last payload")
    return meta, arrays


def _model_dtype(model: ToyUNet) -> str:
    return "f32" if model.dtype == np.float32 else "f64"


def save_checkpoint(path: str, model: ToyUNet, phase: Phase, seed: int) -> CheckpointMeta:
    if phase == "pretrained" and not model.frozen:
        raise CheckpointFormatError("a pretrained checkpoint needs frozen source snapshots in every BN layer")
    meta = CheckpointMeta(
        spec_id=model.spec.spec_id,
        phase=phase,
        seed=seed,
        iterations_source=model.iterations_source,
        iterations_target=model.iterations_target,
        in_channels=model.spec.in_channels,
        num_classes=model.spec.num_classes,
        image_size=model.spec.image_size,
        eps=model.spec.eps,
        dtype=_model_dtype(model),
    )
    atomic_write(path, encode_checkpoint(meta, model.state_arrays()))
    publish(EventType.CHECKPOINT_SAVED, "checkpoint_store", path=path, phase=phase)
    logger.info(f"💾 Saved {phase} checkpoint to {path}")
    return meta


def read_checkpoint(path: str) -> Tuple[CheckpointMeta, Dict[str, np.ndarray]]:
    if not os.path.isfile(path):
        raise CheckpointFormatError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    return decode_checkpoint(blob, source=path)


def load_checkpoint(path: str) -> Tuple[ToyUNet, CheckpointMeta]:
    meta, arrays = read_checkpoint(path)
    if meta.spec_id != SPEC_ID:
        raise CheckpointFormatError(f"{path}: unknown network spec '{meta.spec_id}'")
    spec = NetworkSpec(
        in_channels=meta.in_channels,
        num_classes=meta.num_classes,
        image_size=meta.image_size,
        eps=meta.eps,
    )
    dtype = DType(meta.dtype).numpy
    model = ToyUNet(spec, SeedStreams(meta.seed).init(), dtype=np.dtype(dtype).newbyteorder("="))
    model.load_state_arrays(arrays)
    model.iterations_source = meta.iterations_source
    model.iterations_target = meta.iterations_target
    if meta.phase == "pretrained" and not model.frozen:
        raise CheckpointFormatError(f"{path}: pretrained checkpoint lacks source snapshots")
    logger.debug(f"Loaded {meta.phase} checkpoint {path}")
    return model, meta
