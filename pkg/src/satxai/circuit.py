"""Boolean circuit builder emitting Tseitin clauses as gates are created.

Literals are non-zero ints (DIMACS convention) or one of the constants
``TRUE``/``FALSE``. Every gate folds constants and trivially related inputs, so
building over constant weights produces no clauses for the folded parts.
Each fresh gate output gets the full biconditional, so fixing the circuit
inputs propagates a unique value to every gate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .cnf import CnfFormula, TseitinAux, VarMap
from .fixedpoint import FixedPointFormat, QuantizedValue, from_bits, sum_format, to_bits


class _Const:
    __slots__ = ("value",)

    def __init__(self, value: bool):
        self.value = value

    def __neg__(self):
        return FALSE if self.value else TRUE

    def __bool__(self):
        raise TypeError("circuit constants have no implicit truth value; compare with `is`")

    def __repr__(self):
        return "TRUE" if self.value else "FALSE"


TRUE = _Const(True)
FALSE = _Const(False)


def is_const(lit) -> bool:
    return isinstance(lit, _Const)


def const(value: bool) -> _Const:
    return TRUE if value else FALSE


def lit_value(lit, assignment) -> bool:
    """Value of a literal under an assignment indexed by variable."""
    if isinstance(lit, _Const):
        return lit.value
    v = assignment[abs(lit)]
    return bool(v) if lit > 0 else not v


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class BitVec:
    """Two's-complement signal, least significant bit first."""

    lits: tuple
    fmt: FixedPointFormat

    def __post_init__(self):
        object.__setattr__(self, "lits", tuple(self.lits))
        if len(self.lits) != self.fmt.bits:
            raise CircuitError(f"signal has {len(self.lits)} bits but format {self.fmt} needs {self.fmt.bits}")

    def __len__(self):
        return len(self.lits)

    def __getitem__(self, i):
        return self.lits[i]

    @property
    def sign(self):
        return self.lits[-1]

    def is_constant(self) -> bool:
        return all(is_const(l) for l in self.lits)

    def constant_value(self) -> int | None:
        if not self.is_constant():
            return None
        return from_bits([l.value for l in self.lits])

    def value(self, assignment) -> int:
        return from_bits([lit_value(l, assignment) for l in self.lits])


class CircuitBuilder:
    def __init__(self, formula: CnfFormula | None = None, varmap: VarMap | None = None):
        self.formula = formula if formula is not None else CnfFormula()
        self.varmap = varmap if varmap is not None else VarMap()

    # -- allocation -------------------------------------------------------

    def new_var(self, role=None) -> int:
        v = self.formula.new_var()
        self.varmap.roles[v] = role if role is not None else TseitinAux()
        return v

    def clause(self, lits: Iterable) -> None:
        lits = list(lits)
        for lit in lits:
            if is_const(lit):
                raise CircuitError("constants must be folded before emitting a clause")
        self.formula.add_clause(lits)

    # -- gates ------------------------------------------------------------

    def not_(self, a):
        return -a

    def and_(self, *inputs):
        lits = []
        seen = set()
        for x in _flatten(inputs):
            if x is TRUE:
                continue
            if x is FALSE:
                return FALSE
            if -x in seen:
                return FALSE
            if x not in seen:
                seen.add(x)
                lits.append(x)
        if not lits:
            return TRUE
        if len(lits) == 1:
            return lits[0]
        o = self.new_var()
        self.clause([-x for x in lits] + [o])
        for x in lits:
            self.clause([x, -o])
        return o

    def or_(self, *inputs):
        return -self.and_(*[-x for x in _flatten(inputs)])

    def xor(self, a, b):
        if is_const(a):
            a, b = b, a
        if is_const(b):
            if is_const(a):
                return const(a.value != b.value)
            return -a if b is TRUE else a
        if a == b:
            return FALSE
        if a == -b:
            return TRUE
        o = self.new_var()
        self.clause([-a, -b, -o])
        self.clause([a, b, -o])
        self.clause([a, -b, o])
        self.clause([-a, b, o])
        return o

    def maj(self, a, b, c):
        ins = [a, b, c]
        for i, x in enumerate(ins):
            if is_const(x):
                rest = ins[:i] + ins[i + 1:]
                return self.or_(*rest) if x is TRUE else self.and_(*rest)
        for i, j, k in ((0, 1, 2), (0, 2, 1), (1, 2, 0)):
            if ins[i] == ins[j]:
                return ins[i]
            if ins[i] == -ins[j]:
                return ins[k]
        o = self.new_var()
        for x, y in ((a, b), (a, c), (b, c)):
            self.clause([-x, -y, o])
            self.clause([x, y, -o])
        return o

    def mux(self, sel, then, other):
        if sel is TRUE:
            return then
        if sel is FALSE:
            return other
        if then == other:
            return then
        return self.or_(self.and_(sel, then), self.and_(-sel, other))

    def full_adder(self, a, b, cin):
        s = self.xor(self.xor(a, b), cin)
        return s, self.maj(a, b, cin)

    # -- word-level -------------------------------------------------------

    def constant(self, mantissa: int, fmt: FixedPointFormat) -> BitVec:
        QuantizedValue(fmt, mantissa)  # range check
        return BitVec([const(b) for b in to_bits(mantissa, fmt.bits)], fmt)

    def inputs(self, fmt: FixedPointFormat, role_fn=None) -> BitVec:
        lits = [self.new_var(role_fn(b) if role_fn else None) for b in range(fmt.bits)]
        return BitVec(lits, fmt)

    def resize(self, x: BitVec, fmt: FixedPointFormat) -> BitVec:
        """Sign-extend or drop high bits. Dropping is only sound when the value fits."""
        if fmt.frac != x.fmt.frac:
            raise CircuitError(f"resize cannot change frac bits ({x.fmt} -> {fmt})")
        n = fmt.bits
        if n >= len(x):
            return BitVec(x.lits + (x.sign,) * (n - len(x)), fmt)
        return BitVec(x.lits[:n], fmt)

    def _ripple(self, a: Sequence, b: Sequence, cin) -> list:
        """Modular addition of equal-width bit lists (carry out dropped)."""
        out = []
        c = cin
        for i, (x, y) in enumerate(zip(a, b)):
            if i == len(a) - 1:
                out.append(self.xor(self.xor(x, y), c))
            else:
                s, c = self.full_adder(x, y, c)
                out.append(s)
        return out

    def add_signed(self, a: BitVec, b: BitVec) -> BitVec:
        if a.fmt.frac != b.fmt.frac:
            raise CircuitError(f"cannot add signals with different frac bits: {a.fmt} vs {b.fmt}")
        fmt = FixedPointFormat(max(len(a), len(b)) + 1, a.fmt.frac)
        xa = self.resize(a, fmt).lits
        xb = self.resize(b, fmt).lits
        return BitVec(self._ripple(xa, xb, FALSE), fmt)

    def negate(self, x: BitVec) -> BitVec:
        """Modular two's-complement negation at the same width."""
        one = [TRUE] + [FALSE] * (len(x) - 1)
        return BitVec(self._ripple([-l for l in x.lits], one, FALSE), x.fmt)

    def mul_by_const(self, x: BitVec, w: QuantizedValue) -> BitVec:
        """Shift-and-add over the set bits of |w|, negated when w < 0."""
        fmt = FixedPointFormat(x.fmt.bits + w.fmt.bits, x.fmt.frac + w.fmt.frac)
        m = w.mantissa
        if m == 0:
            return self.constant(0, fmt)
        width = fmt.bits
        xs = list(self.resize(x, FixedPointFormat(width, x.fmt.frac)).lits)
        acc = None
        mag = abs(m)
        j = 0
        while mag >> j:
            if (mag >> j) & 1:
                term = [FALSE] * j + xs[:width - j]
                acc = term if acc is None else self._ripple(acc, term, FALSE)
            j += 1
        out = BitVec(acc, fmt)
        return self.negate(out) if m < 0 else out

    def sum_signals(self, terms: Sequence[BitVec], fmt: FixedPointFormat) -> BitVec:
        """Balanced adder tree, resized to ``fmt`` (which must hold the exact sum)."""
        terms = [t for t in terms if t.constant_value() != 0]
        if not terms:
            return self.constant(0, fmt)
        while len(terms) > 1:
            nxt = []
            for i in range(0, len(terms) - 1, 2):
                nxt.append(self.add_signed(terms[i], terms[i + 1]))
            if len(terms) % 2:
                nxt.append(terms[-1])
            terms = nxt
        return self.resize(terms[0], fmt)

    def relu(self, x: BitVec) -> BitVec:
        s = x.sign
        return BitVec([self.and_(b, -s) for b in x.lits], x.fmt)

    def cmp_signed(self, a: BitVec, b: BitVec):
        """(gt, ge) literals for value(a) > value(b) and value(a) >= value(b)."""
        if a.fmt.frac != b.fmt.frac:
            raise CircuitError(f"cannot compare signals with different frac bits: {a.fmt} vs {b.fmt}")
        fmt = FixedPointFormat(max(len(a), len(b)) + 1, a.fmt.frac)
        xa = self.resize(a, fmt).lits
        xb = self.resize(b, fmt).lits
        diff = self._ripple(xa, [-l for l in xb], TRUE)
        ge = -diff[-1]
        gt = self.and_(ge, self.or_(*diff))
        return gt, ge

    def requantize(self, x: BitVec, fmt: FixedPointFormat) -> BitVec:
        """Arithmetic shift to ``fmt.frac`` (floor), then saturate to ``fmt.bits``."""
        shift = x.fmt.frac - fmt.frac
        bits = list(x.lits)
        if shift > 0:
            bits = bits[shift:] or [x.sign]
        elif shift < 0:
            bits = [FALSE] * (-shift) + bits
        n = fmt.bits
        if len(bits) <= n:
            return BitVec(bits + [bits[-1]] * (n - len(bits)), fmt)
        sign = bits[-1]
        high = bits[n - 1:-1]
        pos_ovf = self.and_(-sign, self.or_(*high))
        neg_ovf = self.and_(sign, self.or_(*[-h for h in high]))
        out = [self.or_(self.and_(b, -neg_ovf), pos_ovf) for b in bits[:n - 1]]
        return BitVec(out + [sign], fmt)


def _flatten(inputs) -> list:
    out = []
    for x in inputs:
        if isinstance(x, (list, tuple)):
            out.extend(x)
        else:
            out.append(x)
    return out
