"""Dense tensors, dtypes and per-tensor affine int8 arithmetic."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, DTypeError

INT8_MIN = -128
INT8_MAX = 127


class DType(str, enum.Enum):
    F32 = "F32"
    F16 = "F16"
    I8 = "I8"
    I32 = "I32"

    @property
    def numpy(self) -> np.dtype:
        return _NUMPY_DTYPES[self]

    @property
    def itemsize(self) -> int:
        return self.numpy.itemsize

    @classmethod
    def from_numpy(cls, dt) -> "DType":
        dt = np.dtype(dt)
        for k, v in _NUMPY_DTYPES.items():
            if v == dt:
                return k
        raise DTypeError(f"unsupported numpy dtype {dt}")


_NUMPY_DTYPES = {
    DType.F32: np.dtype(np.float32),
    DType.F16: np.dtype(np.float16),
    DType.I8: np.dtype(np.int8),
    DType.I32: np.dtype(np.int32),
}


class Tensor:
    """Immutable dense row-major tensor.

    F16 tensors are storage only; every consumer must cast them to F32
    with :func:`cast_f16_to_f32` first.
    """

    __slots__ = ("dtype", "array")

    def __init__(self, dtype: DType | str, array):
        dtype = DType(dtype)
        arr = np.array(array, dtype=dtype.numpy, copy=True, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "dtype", dtype)
        object.__setattr__(self, "array", arr)

    def __setattr__(self, key, value):
        raise AttributeError("Tensor is immutable")

    @classmethod
    def from_flat(cls, dtype: DType | str, shape: Sequence[int], data: Sequence) -> "Tensor":
        dtype = DType(dtype)
        shape = tuple(int(d) for d in shape)
        if any(d < 0 for d in shape):
            raise DomainError(f"negative dimension in shape {list(shape)}")
        n = math.prod(shape)
        if len(data) != n:
            raise DomainError(f"shape {list(shape)} needs {n} elements, got {len(data)}")
        if dtype is DType.F16:
            flat = np.asarray(data, dtype=np.uint16).view(np.float16)
        else:
            flat = np.asarray(data, dtype=dtype.numpy)
        return cls(dtype, flat.reshape(shape))

    @classmethod
    def of(cls, array) -> "Tensor":
        arr = np.asarray(array)
        return cls(DType.from_numpy(arr.dtype), arr)

    @classmethod
    def zeros(cls, dtype: DType | str, shape: Sequence[int]) -> "Tensor":
        dtype = DType(dtype)
        return cls(dtype, np.zeros(tuple(shape), dtype=dtype.numpy))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def nbytes(self) -> int:
        return self.array.size * self.dtype.itemsize

    def flat_data(self) -> list:
        """Row-major element list; F16 elements come back as uint16 bit patterns."""
        if self.dtype is DType.F16:
            return self.array.view(np.uint16).ravel().tolist()
        return self.array.ravel().tolist()

    def bits(self) -> np.ndarray:
        """Raw element bit patterns, for bit-exact comparison."""
        view = {1: np.uint8, 2: np.uint16, 4: np.uint32}[self.dtype.itemsize]
        return self.array.view(view)

    def bit_equal(self, other: "Tensor") -> bool:
        return (
            self.dtype is other.dtype
            and self.shape == other.shape
            and bool(np.array_equal(self.bits(), other.bits()))
        )

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.bit_equal(other)

    def __hash__(self):
        return hash((self.dtype, self.shape, self.bits().tobytes()))

    def __repr__(self):
        return f"Tensor({self.dtype.value}, shape={list(self.shape)})"


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not (self.scale > 0) or not math.isfinite(self.scale):
            raise DomainError(f"scale must be positive and finite, got {self.scale}")
        if int(self.zero_point) != self.zero_point or not INT8_MIN <= self.zero_point <= INT8_MAX:
            raise DomainError(f"zero_point {self.zero_point} outside int8 range")
        object.__setattr__(self, "zero_point", int(self.zero_point))

    @property
    def representable_range(self) -> tuple[float, float]:
        return (
            (INT8_MIN - self.zero_point) * self.scale,
            (INT8_MAX - self.zero_point) * self.scale,
        )


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _require(t: Tensor, dtype: DType, op: str) -> None:
    if not isinstance(t, Tensor) or t.dtype is not dtype:
        got = t.dtype.value if isinstance(t, Tensor) else type(t).__name__
        raise DTypeError(f"{op} expects {dtype.value}, got {got}")


def quantize_affine(t: Tensor, qp: QuantParams) -> Tensor:
    _require(t, DType.F32, "quantize_affine")
    x = t.array.astype(np.float64)
    q = round_half_away(x / qp.scale) + qp.zero_point
    q = np.clip(q, INT8_MIN, INT8_MAX)
    return Tensor(DType.I8, q.astype(np.int8))


def dequantize_affine(q: Tensor, qp: QuantParams) -> Tensor:
    _require(q, DType.I8, "dequantize_affine")
    x = (q.array.astype(np.float64) - qp.zero_point) * qp.scale
    return Tensor(DType.F32, x.astype(np.float32))


def compute_qparams(min_v: float, max_v: float, mode: str = "asymmetric") -> QuantParams:
    if math.isnan(min_v) or math.isnan(max_v):
        raise DomainError("NaN calibration bound")
    if min_v > max_v:
        raise DomainError(f"min {min_v} > max {max_v}")
    lo, hi = min(float(min_v), 0.0), max(float(max_v), 0.0)
    if lo == 0.0 and hi == 0.0:
        return QuantParams(1.0, 0)
    if mode == "asymmetric":
        scale = (hi - lo) / 255.0
        zp = round_half_away(np.float64(INT8_MIN - lo / scale))
        return QuantParams(scale, int(np.clip(zp, INT8_MIN, INT8_MAX)))
    if mode == "symmetric":
        return QuantParams(max(abs(lo), abs(hi)) / 127.0, 0)
    raise DomainError(f"unknown quantization mode {mode!r}")


def cast_f16_to_f32(t: Tensor) -> Tensor:
    _require(t, DType.F16, "cast_f16_to_f32")
    return Tensor(DType.F32, t.array.astype(np.float32))


def fake_quantize(t: Tensor, qp: QuantParams) -> Tensor:
    return dequantize_affine(quantize_affine(t, qp), qp)
