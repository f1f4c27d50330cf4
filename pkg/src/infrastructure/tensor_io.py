"""
BNT1 tensor files.

    magic   4 bytes  b"BNT1"
    dtype   u32      1=f32, 2=f64, 3=u8
    ndim    u32
    extents ndim x u64
    payload row-major, little-endian
"""
import logging
from typing import Tuple, Union

import numpy as np

from src.domain.errors import TensorFormatError
from src.engine.core.tensor import Tensor
from src.engine.core.types import DType
from src.infrastructure.atomic_file import atomic_write

logger = logging.getLogger(__name__)

MAGIC = b"BNT1"
MAGIC_PREFIX = b"BNT"

ArrayLike = Union[Tensor, np.ndarray]


def encode_tensor(t: ArrayLike) -> bytes:
    array = t.data if isinstance(t, Tensor) else np.asarray(t)
    try:
        dtype = DType.from_numpy(array.dtype)
    except ValueError as e:
        raise TensorFormatError(f"cannot store dtype {array.dtype}: {e}") from e
    header = np.array([dtype.code, array.ndim], dtype="<u4").tobytes()
    extents = np.array(array.shape, dtype="<u8").tobytes()
    payload = np.ascontiguousarray(array, dtype=dtype.numpy).tobytes()
    return MAGIC + header + extents + payload


def decode_tensor(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < 4 or not blob.startswith(MAGIC_PREFIX):
        raise TensorFormatError(f"{source}: bad magic {blob[:4]!r}")
    if blob[:4] != MAGIC:
        raise TensorFormatError(f"{source}: unsupported version {blob[3:4]!r}")
    if len(blob) < 12:
        raise TensorFormatError(f"{source}: truncated header")
    code, ndim = (int(v) for v in np.frombuffer(blob, dtype="<u4", count=2, offset=4))
    try:
        dtype = DType.from_code(code)
    except ValueError as e:
        raise TensorFormatError(f"{source}: {e}") from e

    extents_end = 12 + 8 * ndim
    if len(blob) < extents_end:
        raise TensorFormatError(f"{source}: truncated extents")
    shape: Tuple[int, ...] = tuple(int(v) for v in np.frombuffer(blob, dtype="<u8", count=ndim, offset=12))

    expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype.numpy).itemsize
    actual = len(blob) - extents_end
    if actual != expected:
        kind = "truncated payload" if actual < expected else "trailing bytes after payload"
        raise TensorFormatError(f"{source}: {kind} (expected {expected} bytes, found {actual})")
    if expected == 0:
        return np.zeros(shape, dtype=dtype.numpy).astype(dtype.numpy.newbyteorder("="))
    array = np.frombuffer(blob, dtype=dtype.numpy, offset=extents_end).reshape(shape)
    # Native byte order, writable copy.
    return array.astype(array.dtype.newbyteorder("="), copy=True)


def save_tensor(path: str, t: ArrayLike) -> None:
    atomic_write(path, encode_tensor(t))
    logger.debug(f"Saved tensor {path}")


def load_array(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    return decode_tensor(blob, source=path)


def load_tensor(path: str) -> Tensor:
    return Tensor(load_array(path))
