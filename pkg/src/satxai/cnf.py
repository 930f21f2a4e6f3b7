"""Clause database, variable-role map, evaluation and DIMACS interchange."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence, TextIO, Union


class CnfError(ValueError):
    pass


class DimacsParseError(CnfError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


def normalize_clause(lits: Iterable[int], num_vars: int | None = None) -> tuple:
    """Drop duplicate literals (keeping first occurrence order); reject tautologies."""
    seen = set()
    out = []
    for lit in lits:
        lit = int(lit)
        if lit == 0:
            raise CnfError("literal 0 is not allowed inside a clause")
        if num_vars is not None and abs(lit) > num_vars:
            raise CnfError(f"literal {lit} exceeds variable bound {num_vars}")
        if -lit in seen:
            raise CnfError(f"tautological clause rejected: contains {lit} and {-lit}")
        if lit not in seen:
            seen.add(lit)
            out.append(lit)
    return tuple(out)


@dataclass
class CnfFormula:
    num_vars: int = 0
    clauses: list = field(default_factory=list)

    def new_var(self) -> int:
        self.num_vars += 1
        return self.num_vars

    def add_clause(self, lits: Iterable[int]) -> tuple:
        c = normalize_clause(lits, self.num_vars)
        self.clauses.append(c)
        return c

    def extend(self, clauses: Iterable[Iterable[int]]) -> None:
        for c in clauses:
            self.add_clause(c)

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    def copy(self) -> "CnfFormula":
        return CnfFormula(self.num_vars, list(self.clauses))

    def with_units(self, lits: Iterable[int]) -> "CnfFormula":
        f = self.copy()
        for lit in lits:
            f.add_clause([lit])
        return f

    def __eq__(self, other):
        if not isinstance(other, CnfFormula):
            return NotImplemented
        return self.num_vars == other.num_vars and [tuple(c) for c in self.clauses] == [
            tuple(c) for c in other.clauses
        ]


Assignment = Union[Mapping[int, bool], Sequence]


def _value_getter(assignment: Assignment, num_vars: int):
    if isinstance(assignment, Mapping):
        missing = [v for v in range(1, num_vars + 1) if v not in assignment]
        if missing:
            raise CnfError(f"assignment is partial: variable {missing[0]} unassigned")
        return lambda v: bool(assignment[v])
    # sequence indexed by variable, slot 0 unused
    if len(assignment) < num_vars + 1:
        raise CnfError(f"assignment is partial: covers {len(assignment) - 1} of {num_vars} variables")
    for v in range(1, num_vars + 1):
        if assignment[v] is None:
            raise CnfError(f"assignment is partial: variable {v} unassigned")
    return lambda v: bool(assignment[v])


def evaluate(formula: CnfFormula, assignment: Assignment) -> bool:
    """True iff every clause has a true literal under a total assignment."""
    val = _value_getter(assignment, formula.num_vars)
    for clause in formula.clauses:
        if not any(val(lit) if lit > 0 else not val(-lit) for lit in clause):
            return False
    return True


def write_dimacs(formula: CnfFormula, sink: TextIO | str | Path, comments: Sequence[str] = ()) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w") as fh:
            write_dimacs(formula, fh, comments)
        return
    for c in comments:
        sink.write(f"c {c}\n")
    sink.write(f"p cnf {formula.num_vars} {len(formula.clauses)}\n")
    for clause in formula.clauses:
        sink.write(" ".join(map(str, clause)))
        sink.write(" 0\n" if clause else "0\n")


def dumps_dimacs(formula: CnfFormula) -> str:
    buf = io.StringIO()
    write_dimacs(formula, buf)
    return buf.getvalue()


def read_dimacs(source: TextIO | str | Path) -> CnfFormula:
    """Parse DIMACS CNF. ``source`` is a file object, a path, or the text itself."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        with open(source) as fh:
            return read_dimacs(fh)
    text = source if isinstance(source, str) else source.read()
    num_vars = num_clauses = None
    clauses = []
    pending: list[int] = []
    pending_line = 0
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            break
        if line.startswith("p"):
            parts = line.split()
            if num_vars is not None:
                raise DimacsParseError(line_no, "duplicate header")
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsParseError(line_no, f"malformed header {line!r}")
            try:
                num_vars, num_clauses = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsParseError(line_no, f"malformed header {line!r}") from None
            if num_vars < 0 or num_clauses < 0:
                raise DimacsParseError(line_no, "negative counts in header")
            continue
        if num_vars is None:
            raise DimacsParseError(line_no, "clause before 'p cnf' header")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsParseError(line_no, f"malformed literal {tok!r}") from None
            if abs(lit) > num_vars:
                raise DimacsParseError(line_no, f"literal {lit} exceeds declared {num_vars} variables")
            if lit == 0:
                try:
                    clauses.append(normalize_clause(pending))
                except CnfError as e:
                    raise DimacsParseError(line_no, str(e)) from None
                pending = []
            else:
                if not pending:
                    pending_line = line_no
                pending.append(lit)
    if num_vars is None:
        raise DimacsParseError(0, "missing 'p cnf' header")
    if pending:
        raise DimacsParseError(pending_line, "clause not terminated by 0")
    if len(clauses) != num_clauses:
        raise DimacsParseError(0, f"header declares {num_clauses} clauses, found {len(clauses)}")
    return CnfFormula(num_vars, clauses)


# ---------------------------------------------------------------------------
# variable roles


class InputFeatureBit(NamedTuple):
    frame: int
    feature: int
    bit: int


class ActivationBit(NamedTuple):
    layer: int
    unit: int
    bit: int


class OutputLogitBit(NamedTuple):
    cls: int
    bit: int


class FlipIndicator(NamedTuple):
    frame: int
    feature: int
    bit: int | None  # None: feature-level change indicator


class QueryGuard(NamedTuple):
    label: str


class CardinalityAux(NamedTuple):
    pass


class TseitinAux(NamedTuple):
    pass


_ROLE_TAGS = {
    InputFeatureBit: "in",
    ActivationBit: "act",
    OutputLogitBit: "out",
    FlipIndicator: "flip",
    QueryGuard: "guard",
    CardinalityAux: "card",
    TseitinAux: "aux",
}
_TAG_ROLES = {v: k for k, v in _ROLE_TAGS.items()}


@dataclass
class VarMap:
    """Role of every variable, plus the ledger of constant-folded weights and biases."""

    roles: dict = field(default_factory=dict)  # var -> role tuple
    constants: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def set_role(self, var: int, role) -> None:
        if var in self.roles and not isinstance(self.roles[var], TseitinAux):
            raise CnfError(f"variable {var} already has role {self.roles[var]}")
        self.roles[var] = role

    def role(self, var: int):
        return self.roles[var]

    def vars_with(self, role_type) -> list:
        return sorted(v for v, r in self.roles.items() if isinstance(r, role_type))

    def input_bits(self) -> dict:
        """(frame, feature, bit) -> var."""
        return {(r.frame, r.feature, r.bit): v for v, r in self.roles.items() if isinstance(r, InputFeatureBit)}

    def decode_input(self, assignment: Assignment, shape: tuple[int, int], bits: int) -> list:
        """Input mantissa grid encoded by a (model) assignment."""
        idx = self.input_bits()
        grid = []
        for t in range(shape[0]):
            row = []
            for d in range(shape[1]):
                u = 0
                for b in range(bits):
                    if assignment[idx[(t, d, b)]]:
                        u |= 1 << b
                if u >> (bits - 1):
                    u -= 1 << bits
                row.append(u)
            grid.append(row)
        return grid

    def to_dict(self) -> dict:
        roles = []
        for v in sorted(self.roles):
            r = self.roles[v]
            roles.append([v, _ROLE_TAGS[type(r)], *r])
        return {"roles": roles, "constants": self.constants, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "VarMap":
        roles = {}
        for entry in d["roles"]:
            v, tag, *fields = entry
            roles[int(v)] = _TAG_ROLES[tag](*fields)
        return cls(roles, list(d.get("constants", [])), dict(d.get("meta", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "VarMap":
        return cls.from_dict(json.loads(Path(path).read_text()))
