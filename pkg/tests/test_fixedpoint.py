import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satxai.fixedpoint import (
    FixedPointError,
    FixedPointFormat as Fmt,
    QuantizedValue as QV,
    dequantize,
    from_bits,
    quantize,
    requantize,
    to_bits,
    widened_mul,
    widened_sum,
)

formats = st.integers(2, 16).flatmap(lambda n: st.builds(Fmt, st.just(n), st.integers(0, n - 1)))


def values_in(fmt):
    return st.integers(fmt.min_mantissa, fmt.max_mantissa).map(lambda m: QV(fmt, m))


@pytest.mark.parametrize("bits,frac", [(1, 0), (4, 4), (4, -1), (300, 2)])
def test_format_rejects_bad_shapes(bits, frac):
    with pytest.raises(FixedPointError):
        Fmt(bits, frac)


def test_storage_limit():
    assert Fmt.storage(32, 3).bits == 32
    with pytest.raises(FixedPointError):
        Fmt.storage(33, 0)
    with pytest.raises(FixedPointError):
        Fmt.from_dict({"bits": 40, "frac": 1})


def test_value_range_checked():
    with pytest.raises(FixedPointError):
        QV(Fmt(4, 2), 8)
    with pytest.raises(FixedPointError):
        QV(Fmt(4, 2), -9)


def test_quantize_examples():
    assert quantize(0.5, Fmt(4, 2)).mantissa == 2
    assert quantize(10.0, Fmt(4, 2)).mantissa == 7
    assert quantize(-10.0, Fmt(4, 2)).mantissa == -8
    # one-line arithmetic oracle: -0.3 * 16 = -4.8, nearest integer -5
    assert quantize(-0.3, Fmt(8, 4)).mantissa == round(-0.3 * 16)


def test_quantize_ties_away_from_zero():
    f = Fmt(8, 1)
    assert quantize(0.25, f).mantissa == 1
    assert quantize(-0.25, f).mantissa == -1
    assert quantize(0.75, f).mantissa == 2
    assert quantize(-0.75, f).mantissa == -2


@pytest.mark.parametrize("x", [math.nan, math.inf, -math.inf])
def test_quantize_rejects_non_finite(x):
    with pytest.raises(FixedPointError):
        quantize(x, Fmt(8, 4))


def test_widened_mul_examples():
    f = Fmt(4, 2)
    r = widened_mul(QV(f, 2), QV(f, 3))
    assert (r.mantissa, r.fmt) == (6, Fmt(8, 4))
    assert widened_mul(QV(f, -7), QV(f, 0)).mantissa == 0
    g = Fmt(4, 0)
    r = widened_mul(QV(g, -8), QV(g, -8))
    assert (r.mantissa, r.fmt) == ((-8) * (-8), Fmt(8, 0))


def test_widened_sum_examples():
    f = Fmt(4, 0)
    assert widened_sum([], f).mantissa == 0
    r = widened_sum([QV(f, 1)] * 4)
    assert (r.mantissa, r.fmt) == (4, Fmt(6, 0))
    rng = random.Random(3)
    terms = [QV(Fmt(8, 3), rng.randint(-128, 127)) for _ in range(8)]
    r = widened_sum(terms)
    assert r.fmt == Fmt(11, 3)
    assert r.mantissa == sum(t.mantissa for t in terms)


def test_widened_sum_needs_format_when_empty():
    with pytest.raises(FixedPointError):
        widened_sum([])


def test_requantize_examples():
    r = requantize(QV(Fmt(8, 4), 6), Fmt(4, 2))
    assert r.mantissa == 6 >> 2
    v = QV(Fmt(6, 2), -13)
    assert requantize(v, v.fmt) == v
    assert requantize(QV(Fmt(8, 0), 120), Fmt(4, 0)).mantissa == 7
    assert requantize(QV(Fmt(8, 0), -120), Fmt(4, 0)).mantissa == -8


def test_requantize_floors_negative_values():
    # -5/4 = -1.25 floors to -2 at f=0
    assert requantize(QV(Fmt(8, 2), -5), Fmt(4, 0)).mantissa == -2


def test_exact_arithmetic_random_cases():
    rng = random.Random(11)
    for _ in range(10_000):
        fa = Fmt(rng.randint(2, 16), 0)
        fa = Fmt(fa.bits, rng.randint(0, fa.bits - 1))
        fb = Fmt(rng.randint(2, 16), 0)
        fb = Fmt(fb.bits, rng.randint(0, fb.bits - 1))
        a = QV(fa, rng.randint(fa.min_mantissa, fa.max_mantissa))
        b = QV(fb, rng.randint(fb.min_mantissa, fb.max_mantissa))
        p = widened_mul(a, b)
        assert Fraction(p.mantissa, 2 ** p.fmt.frac) == Fraction(a.mantissa, 2 ** fa.frac) * Fraction(
            b.mantissa, 2 ** fb.frac)
        terms = [QV(fa, rng.randint(fa.min_mantissa, fa.max_mantissa)) for _ in range(rng.randint(1, 9))]
        s = widened_sum(terms)
        assert s.mantissa == sum(t.mantissa for t in terms)


@given(formats, st.floats(-100, 100, allow_nan=False))
def test_quantize_error_bound(fmt, x):
    q = quantize(x, fmt)
    lo, hi = dequantize(QV(fmt, fmt.min_mantissa)), dequantize(QV(fmt, fmt.max_mantissa))
    if lo <= x <= hi:
        assert abs(dequantize(q) - x) <= 2.0 ** (-fmt.frac - 1) + 1e-12
    else:
        assert q.mantissa in (fmt.min_mantissa, fmt.max_mantissa)


@given(formats.flatmap(lambda f: values_in(f)))
def test_quantize_dequantize_idempotent(q):
    assert quantize(dequantize(q), q.fmt) == q


@given(formats.flatmap(lambda f: values_in(f)))
def test_bits_round_trip(q):
    assert from_bits(to_bits(q.mantissa, q.fmt.bits)) == q.mantissa
    assert q.bits() == to_bits(q.mantissa, q.fmt.bits)


@settings(max_examples=200)
@given(formats, formats, st.data())
def test_requantize_monotone(src, dst, data):
    a = data.draw(values_in(src))
    b = data.draw(values_in(src))
    if a.mantissa > b.mantissa:
        a, b = b, a
    assert requantize(a, dst).mantissa <= requantize(b, dst).mantissa


def test_str():
    assert str(Fmt(8, 4)) == "Q8.4"
