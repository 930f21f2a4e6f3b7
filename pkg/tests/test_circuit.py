import itertools
import random

import pytest

from satxai.circuit import FALSE, TRUE, BitVec, CircuitBuilder, CircuitError, is_const
from satxai.fixedpoint import FixedPointFormat as Fmt
from satxai.fixedpoint import QuantizedValue as QV
from satxai.fixedpoint import requantize, to_bits, widened_mul

from circuit_eval import lit_of, propagate_eval


def fixed_inputs(signals, values):
    out = {}
    for bv, m in zip(signals, values):
        for lit, bit in zip(bv.lits, to_bits(m, len(bv))):
            out[abs(lit)] = bool(bit) == (lit > 0)
    return out


def mantissas(fmt):
    return range(fmt.min_mantissa, fmt.max_mantissa + 1)


def test_and_folding():
    b = CircuitBuilder()
    x = b.new_var()
    assert b.and_(TRUE, x) == x
    assert b.and_(FALSE, x) is FALSE
    assert b.and_(x, -x) is FALSE
    assert b.and_() is TRUE
    assert b.formula.clauses == []


def test_and_emits_reference_clauses():
    b = CircuitBuilder()
    x1, x2 = b.new_var(), b.new_var()
    y = b.and_(x1, x2)
    assert [set(c) for c in b.formula.clauses] == [{-x1, -x2, y}, {x1, -y}, {x2, -y}]


@pytest.mark.parametrize("gate,fn", [
    ("and_", lambda a, c: a and c),
    ("or_", lambda a, c: a or c),
    ("xor", lambda a, c: a != c),
])
def test_two_input_gates_truth_table(gate, fn):
    b = CircuitBuilder()
    x1, x2 = b.new_var(), b.new_var()
    o = getattr(b, gate)(x1, x2)
    for a, c in itertools.product([False, True], repeat=2):
        val = propagate_eval(b.formula, {x1: a, x2: c})
        assert lit_of(o, val) == fn(a, c)


def test_not_and_constants():
    b = CircuitBuilder()
    x = b.new_var()
    assert b.not_(x) == -x
    assert -TRUE is FALSE and -FALSE is TRUE
    assert b.xor(x, TRUE) == -x
    assert b.xor(TRUE, TRUE) is FALSE
    with pytest.raises(TypeError):
        bool(TRUE)


def test_constant_in_clause_rejected():
    b = CircuitBuilder()
    with pytest.raises(CircuitError):
        b.clause([TRUE])


def test_full_adder_all_rows():
    b = CircuitBuilder()
    a, c, cin = b.new_var(), b.new_var(), b.new_var()
    s, cout = b.full_adder(a, c, cin)
    for bits in itertools.product([0, 1], repeat=3):
        val = propagate_eval(b.formula, dict(zip((a, c, cin), map(bool, bits))))
        total = sum(bits)
        assert (lit_of(s, val), lit_of(cout, val)) == (bool(total & 1), total >= 2)


def test_full_adder_examples_with_constants():
    b = CircuitBuilder()
    assert b.full_adder(FALSE, FALSE, FALSE) == (FALSE, FALSE)
    assert b.full_adder(TRUE, TRUE, FALSE) == (FALSE, TRUE)


def _exhaustive_binary(op, ref, fa, fb):
    b = CircuitBuilder()
    x, y = b.inputs(fa), b.inputs(fb)
    out = op(b, x, y)
    for m, n in itertools.product(mantissas(fa), mantissas(fb)):
        val = propagate_eval(b.formula, fixed_inputs((x, y), (m, n)))
        ref(out, val, m, n)


def test_add_signed_exhaustive_4bit():
    def check(out, val, m, n):
        assert out.fmt == Fmt(5, 0)
        assert out.value(val) == m + n

    _exhaustive_binary(lambda b, x, y: b.add_signed(x, y), check, Fmt(4, 0), Fmt(4, 0))


def test_add_signed_mixed_widths_and_examples():
    def check(out, val, m, n):
        assert out.value(val) == m + n

    _exhaustive_binary(lambda b, x, y: b.add_signed(x, y), check, Fmt(3, 1), Fmt(5, 1))
    b = CircuitBuilder()
    s = b.add_signed(b.constant(-1, Fmt(4, 0)), b.constant(1, Fmt(4, 0)))
    assert s.constant_value() == 0 and len(s) == 5
    x = b.inputs(Fmt(4, 0))
    z = b.add_signed(x, b.constant(0, Fmt(4, 0)))
    for m in mantissas(Fmt(4, 0)):
        assert z.value(propagate_eval(b.formula, fixed_inputs([x], [m]))) == m


def test_add_signed_frac_mismatch():
    b = CircuitBuilder()
    with pytest.raises(CircuitError):
        b.add_signed(b.inputs(Fmt(4, 1)), b.inputs(Fmt(4, 2)))


def test_mul_by_const_exhaustive_4bit():
    fx = fw = Fmt(4, 0)
    for w in mantissas(fw):
        b = CircuitBuilder()
        x = b.inputs(fx)
        out = b.mul_by_const(x, QV(fw, w))
        for m in mantissas(fx):
            val = propagate_eval(b.formula, fixed_inputs([x], [m]))
            ref = widened_mul(QV(fx, m), QV(fw, w))
            assert out.fmt == ref.fmt
            assert out.value(val) == ref.mantissa


def test_mul_by_const_special_weights():
    b = CircuitBuilder()
    x = b.inputs(Fmt(4, 2))
    n = b.formula.num_clauses
    z = b.mul_by_const(x, QV(Fmt(6, 3), 0))
    assert z.constant_value() == 0 and b.formula.num_clauses == n
    one = b.mul_by_const(x, QV(Fmt(6, 3), 1))
    assert one.lits == x.lits + (x.sign,) * 6
    assert b.formula.num_clauses == n


def test_relu_exhaustive_5bit():
    b = CircuitBuilder()
    x = b.inputs(Fmt(5, 2))
    r = b.relu(x)
    for m in mantissas(x.fmt):
        val = propagate_eval(b.formula, fixed_inputs([x], [m]))
        assert r.value(val) == max(0, m)


def test_cmp_signed_exhaustive_4bit():
    def check(out, val, m, n):
        gt, ge = out
        assert (lit_of(gt, val), lit_of(ge, val)) == (m > n, m >= n)

    _exhaustive_binary(lambda b, x, y: b.cmp_signed(x, y), check, Fmt(4, 0), Fmt(4, 0))


def test_cmp_signed_examples():
    b = CircuitBuilder()
    gt, ge = b.cmp_signed(b.constant(3, Fmt(4, 0)), b.constant(3, Fmt(4, 0)))
    assert gt is FALSE and ge is TRUE
    gt, _ = b.cmp_signed(b.constant(-1, Fmt(4, 0)), b.constant(0, Fmt(4, 0)))
    assert gt is FALSE


def test_requantize_exhaustive_6_to_4():
    b = CircuitBuilder()
    src, dst = Fmt(6, 2), Fmt(4, 0)
    x = b.inputs(src)
    y = b.requantize(x, dst)
    for m in mantissas(src):
        val = propagate_eval(b.formula, fixed_inputs([x], [m]))
        assert y.value(val) == requantize(QV(src, m), dst).mantissa


def test_requantize_identity_and_saturation():
    b = CircuitBuilder()
    x = b.inputs(Fmt(5, 2))
    assert b.requantize(x, Fmt(5, 2)).lits == x.lits
    c = b.requantize(b.constant(120, Fmt(8, 0)), Fmt(4, 0))
    assert c.constant_value() == 7


def test_sum_signals_random_sampled():
    rng = random.Random(5)
    b = CircuitBuilder()
    f = Fmt(5, 1)
    xs = [b.inputs(f) for _ in range(5)]
    target = Fmt(8, 1)
    s = b.sum_signals(xs + [b.constant(0, f)], target)
    for _ in range(300):
        ms = [rng.randint(-16, 15) for _ in xs]
        val = propagate_eval(b.formula, fixed_inputs(xs, ms))
        assert s.value(val) == sum(ms)


def test_folded_and_unfolded_agree():
    # constant operand vs the same operand pinned through a free input
    f = Fmt(4, 1)
    for c in mantissas(f):
        b1 = CircuitBuilder()
        x1 = b1.inputs(f)
        out1 = b1.add_signed(x1, b1.constant(c, f))
        b2 = CircuitBuilder()
        x2, y2 = b2.inputs(f), b2.inputs(f)
        out2 = b2.add_signed(x2, y2)
        for m in mantissas(f):
            v1 = propagate_eval(b1.formula, fixed_inputs([x1], [m]))
            v2 = propagate_eval(b2.formula, fixed_inputs([x2, y2], [m, c]))
            assert out1.value(v1) == out2.value(v2)


def test_emission_is_deterministic_and_bounded():
    def build():
        b = CircuitBuilder()
        x = b.inputs(Fmt(4, 2))
        y = b.mul_by_const(x, QV(Fmt(6, 3), -11))
        b.requantize(b.relu(y), Fmt(4, 2))
        return b.formula

    f1, f2 = build(), build()
    assert f1 == f2
    assert all(0 < abs(l) <= f1.num_vars for c in f1.clauses for l in c)


def test_bitvec_width_checked():
    with pytest.raises(CircuitError):
        BitVec([TRUE, FALSE], Fmt(3, 0))
    assert is_const(TRUE) and not is_const(3)
