from enum import Enum

import numpy as np


class DType(str, Enum):
    """Element types understood by tensors, BNT1 files and BNCK checkpoints."""
    F32 = "f32"
    F64 = "f64"
    U8 = "u8"

    @property
    def code(self) -> int:
        return _CODES[self]

    @property
    def numpy(self) -> np.dtype:
        return np.dtype(_NUMPY[self])

    @classmethod
    def from_code(cls, code: int) -> "DType":
        for dtype, value in _CODES.items():
            if value == code:
                return dtype
        raise ValueError(f"Unknown dtype code {code}")

    @classmethod
    def from_numpy(cls, dtype: np.dtype) -> "DType":
        dtype = np.dtype(dtype)
        for member, name in _NUMPY.items():
            if np.dtype(name) == dtype:
                return member
        raise ValueError(f"Unsupported numpy dtype {dtype}")


_CODES = {DType.F32: 1, DType.F64: 2, DType.U8: 3}
# Little-endian on disk regardless of host order.
_NUMPY = {DType.F32: "<f4", DType.F64: "<f8", DType.U8: "u1"}
