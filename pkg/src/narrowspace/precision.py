"""Reduced IEEE 754 binary formats ``T_{w,t}`` emulated on binary32 carriers.

A format has one sign bit, ``w`` exponent bits and ``t`` trailing
significand bits, with bias ``2**(w-1) - 1``, gradual underflow,
signed zeros, infinities and NaN.  ``T5_10`` is binary16 and ``T8_23``
is binary32.  Quantization rounds to nearest, ties to even; magnitudes
that round past the largest finite value become infinite.

With ``w = 1`` the only exponent codes are 0 (subnormal) and 1
(Inf/NaN), so the format has no normal numbers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

_NAME = re.compile(r"^T(\d+)_(\d+)$")


@dataclass(frozen=True)
class ReducedFloatType:
    w: int
    t: int

    def __post_init__(self):
        if not (1 <= self.w <= 8 and 1 <= self.t <= 23):
            raise ValueError(f"unsupported format w={self.w}, t={self.t}")

    @property
    def name(self) -> str:
        return f"T{self.w}_{self.t}"

    def __str__(self) -> str:
        return self.name

    @property
    def storage_width(self) -> int:
        return 1 + self.w + self.t

    @property
    def bias(self) -> int:
        return 2 ** (self.w - 1) - 1

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def emax(self) -> int:
        return 2 ** self.w - 2 - self.bias

    @cached_property
    def max_finite(self) -> float:
        if self.w == 1:
            return float(np.ldexp(2.0 ** self.t - 1, self.emin - self.t))
        return float(np.ldexp(2.0 - 2.0 ** -self.t, self.emax))

    @cached_property
    def min_subnormal(self) -> float:
        return float(np.ldexp(1.0, self.emin - self.t))

    @classmethod
    def parse(cls, name: str) -> "ReducedFloatType":
        m = _NAME.match(name.strip())
        if not m:
            raise ValueError(f"bad type name {name!r}; expected e.g. 'T5_10'")
        return cls(int(m.group(1)), int(m.group(2)))


HALF = ReducedFloatType(5, 10)
SINGLE = ReducedFloatType(8, 23)


def storage_width(ty: ReducedFloatType) -> int:
    return ty.storage_width


def type_grid() -> list[ReducedFloatType]:
    """All formats with ``w`` in [1, 8] and ``t`` in [1, 23], by width then ``w``."""
    grid = [ReducedFloatType(w, t) for w in range(1, 9) for t in range(1, 24)]
    return sorted(grid, key=lambda ty: (ty.storage_width, ty.w))


def quantize_tensor(values, ty: ReducedFloatType) -> np.ndarray:
    """Project binary32 values onto the value set of ``ty``.

    Inputs that are not already binary32 are first rounded to binary32.
    The result is a float32 array of the same shape.
    """
    x = np.asarray(values, dtype=np.float32)
    if ty == SINGLE:
        return x.copy()
    with np.errstate(invalid="ignore", over="ignore"):
        a = np.abs(x.astype(np.float64))
        _, e = np.frexp(a)
        q = np.maximum(e - 1, ty.emin) - ty.t
        r = np.ldexp(np.rint(np.ldexp(a, -q)), q)
        r = np.where(r > ty.max_finite, np.inf, r)
        r = np.where(np.isnan(a), np.nan, np.copysign(r, x))
    return r.astype(np.float32)


def quantize_scalar(x, ty: ReducedFloatType) -> float:
    return float(quantize_tensor(np.float32(x), ty))

