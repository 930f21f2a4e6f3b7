"""Two's-complement fixed-point arithmetic.

This is the bit-exact reference semantics. Every gadget in :mod:`satxai.circuit`
must agree with these functions on every input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

MAX_BITS = 32
# Widened intermediate results (products of sums) may exceed the storage limit.
MAX_WIDENED_BITS = 256


class FixedPointError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class FixedPointFormat:
    """Signed format with ``bits`` total bits, ``frac`` of them fractional."""

    bits: int
    frac: int

    def __post_init__(self):
        if not 2 <= self.bits <= MAX_WIDENED_BITS:
            raise FixedPointError(f"bits must be in [2, {MAX_WIDENED_BITS}], got {self.bits}")
        if not 0 <= self.frac < self.bits:
            raise FixedPointError(f"frac must be in [0, bits), got frac={self.frac} bits={self.bits}")

    @classmethod
    def storage(cls, bits: int, frac: int) -> "FixedPointFormat":
        """Format for stored weights/activations; limited to 32 bits."""
        if bits > MAX_BITS:
            raise FixedPointError(f"storage formats are limited to {MAX_BITS} bits, got {bits}")
        return cls(bits, frac)

    @property
    def min_mantissa(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def max_mantissa(self) -> int:
        return (1 << (self.bits - 1)) - 1

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.frac

    def saturate(self, mantissa: int) -> int:
        return max(self.min_mantissa, min(self.max_mantissa, mantissa))

    def to_dict(self) -> dict:
        return {"bits": self.bits, "frac": self.frac}

    @classmethod
    def from_dict(cls, d: dict) -> "FixedPointFormat":
        return cls.storage(int(d["bits"]), int(d["frac"]))

    def __str__(self):
        return f"Q{self.bits}.{self.frac}"


@dataclass(frozen=True)
class QuantizedValue:
    fmt: FixedPointFormat
    mantissa: int

    def __post_init__(self):
        if not self.fmt.min_mantissa <= self.mantissa <= self.fmt.max_mantissa:
            raise FixedPointError(f"mantissa {self.mantissa} out of range for {self.fmt}")

    @property
    def value(self) -> float:
        return dequantize(self)

    def bits(self) -> list[int]:
        """Two's-complement bits, least significant first."""
        return to_bits(self.mantissa, self.fmt.bits)


def to_bits(mantissa: int, width: int) -> list[int]:
    u = mantissa & ((1 << width) - 1)
    return [(u >> i) & 1 for i in range(width)]


def from_bits(bits: Sequence[int]) -> int:
    u = 0
    for i, b in enumerate(bits):
        if b:
            u |= 1 << i
    if bits and bits[-1]:
        u -= 1 << len(bits)
    return u


def round_half_away(y: float) -> int:
    r = math.floor(abs(y) + 0.5)
    return int(r) if y >= 0 else -int(r)


def quantize(x: float, fmt: FixedPointFormat) -> QuantizedValue:
    if not math.isfinite(x):
        raise FixedPointError(f"cannot quantize non-finite value {x!r}")
    # scaling by a power of two is exact in binary floating point
    m = round_half_away(math.ldexp(float(x), fmt.frac))
    return QuantizedValue(fmt, fmt.saturate(m))


def dequantize(q: QuantizedValue) -> float:
    return math.ldexp(q.mantissa, -q.fmt.frac)


def widened_mul(a: QuantizedValue, b: QuantizedValue) -> QuantizedValue:
    fmt = FixedPointFormat(a.fmt.bits + b.fmt.bits, a.fmt.frac + b.fmt.frac)
    return QuantizedValue(fmt, a.mantissa * b.mantissa)


def sum_format(fmt: FixedPointFormat, count: int) -> FixedPointFormat:
    """Format that holds the exact sum of ``count`` values of ``fmt``."""
    extra = math.ceil(math.log2(count)) if count > 1 else 0
    return FixedPointFormat(fmt.bits + extra, fmt.frac)


def widened_sum(terms: Iterable[QuantizedValue], fmt: FixedPointFormat | None = None) -> QuantizedValue:
    """Exact sum. An empty list sums to zero in ``fmt``."""
    terms = list(terms)
    if not terms:
        if fmt is None:
            raise FixedPointError("empty sum needs an explicit format")
        return QuantizedValue(fmt, 0)
    fmt = fmt or terms[0].fmt
    for t in terms:
        if t.fmt != fmt:
            raise FixedPointError(f"widened_sum terms must share one format: {t.fmt} != {fmt}")
    return QuantizedValue(sum_format(fmt, len(terms)), sum(t.mantissa for t in terms))


def shift_mantissa(mantissa: int, from_frac: int, to_frac: int) -> int:
    # Python's >> on negative ints is an arithmetic (floor) shift
    if to_frac < from_frac:
        return mantissa >> (from_frac - to_frac)
    return mantissa << (to_frac - from_frac)


def requantize(v: QuantizedValue, fmt: FixedPointFormat) -> QuantizedValue:
    """Floor-shift to ``fmt.frac`` fractional bits, then saturate."""
    m = shift_mantissa(v.mantissa, v.fmt.frac, fmt.frac)
    return QuantizedValue(fmt, fmt.saturate(m))
