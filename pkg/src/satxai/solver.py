"""CDCL SAT solver with assumption-based incremental solving, and a DIMACS backend.

The internal solver uses two watched literals, 1-UIP learning with
non-chronological backjumping, VSIDS branching with phase saving, Luby
restarts and LBD-based learned-clause deletion. Assumptions are taken as the
first decisions, so learned clauses stay valid across calls.
"""

from __future__ import annotations

import enum
import heapq
import logging
import random
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cnf import CnfError, CnfFormula, evaluate, normalize_clause, write_dimacs

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class BackendError(SolverError):
    pass


class Status(enum.Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    BUDGET = "BUDGET_EXHAUSTED"


@dataclass
class SolveResult:
    status: Status
    model: list | None = None  # indexed by variable, slot 0 unused
    stats: dict = field(default_factory=dict)

    @property
    def is_sat(self) -> bool:
        return self.status is Status.SAT

    @property
    def is_unsat(self) -> bool:
        return self.status is Status.UNSAT

    def value(self, lit: int) -> bool:
        v = self.model[abs(lit)]
        return v if lit > 0 else not v


@dataclass(frozen=True)
class SolverConfig:
    seed: int = 0
    var_decay: float = 0.95
    restart_base: int = 64
    keep_lbd: int = 3
    conflict_budget: int | None = None

    def __post_init__(self):
        if not 0.0 < self.var_decay < 1.0:
            raise ValueError("var_decay must be in (0, 1)")
        if self.restart_base < 1:
            raise ValueError("restart_base must be >= 1")


def luby(i: int) -> int:
    """i-th element (0-based) of the Luby sequence 1 1 2 1 1 2 4 ..."""
    size, seq = 1, 0
    while size < i + 1:
        seq += 1
        size = 2 * size + 1
    while size - 1 != i:
        size = (size - 1) >> 1
        seq -= 1
        i = i % size
    return 1 << seq


def _ilit(lit: int) -> int:
    return 2 * lit if lit > 0 else -2 * lit + 1


def _dlit(p: int) -> int:
    return -(p >> 1) if p & 1 else p >> 1


class CdclSolver:
    def __init__(self, num_vars: int = 0, config: SolverConfig | None = None):
        self.config = config or SolverConfig()
        self._rng = random.Random(self.config.seed)
        self.num_vars = 0
        self.val = [0, 0]  # per internal literal: 1 true, -1 false, 0 unassigned
        self.level = [0]
        self.reason = [-1]
        self.activity = [0.0]
        self.polarity = [False]
        self.seen = [False]
        self.in_heap = [False]
        self.watches = [[], []]
        self.clauses: list = []  # internal literal lists, None when deleted
        self.learnt: list = []  # parallel: lbd for learned clauses, 0 for original
        self.originals: list = []  # DIMACS tuples, for model self-checks
        self._check_arr = None
        self._prev_assumps: list = []
        self.trail: list = []
        self.trail_lim: list = []
        self.qhead = 0
        self.heap: list = []
        self.var_inc = 1.0
        self.ok = True
        self.num_learnts = 0
        self.max_learnts = 2000
        self.stats = {"decisions": 0, "conflicts": 0, "propagations": 0, "restarts": 0,
                      "learned": 0, "deleted": 0, "solves": 0}
        self.reserve(num_vars)

    @classmethod
    def from_formula(cls, formula: CnfFormula, config: SolverConfig | None = None) -> "CdclSolver":
        s = cls(formula.num_vars, config)
        for c in formula.clauses:
            s.add_clause(c)
        return s

    # -- variables and clauses -------------------------------------------

    def reserve(self, n: int) -> None:
        while self.num_vars < n:
            self.num_vars += 1
            v = self.num_vars
            self.val += [0, 0]
            self.level.append(0)
            self.reason.append(-1)
            self.activity.append(self._rng.random() * 1e-5)
            self.polarity.append(False)
            self.seen.append(False)
            self.in_heap.append(True)
            self.watches += [[], []]
            heapq.heappush(self.heap, (-self.activity[v], v))

    def add_clause(self, lits: Iterable[int]) -> None:
        try:
            clause = normalize_clause(lits, self.num_vars)
        except CnfError as e:
            raise SolverError(str(e)) from None
        self._backtrack(0)
        self.originals.append(clause)
        self._check_arr = None
        if not self.ok:
            return
        val = self.val
        c = []
        for lit in clause:
            p = _ilit(lit)
            if val[p] == 1:
                return
            if val[p] == 0:
                c.append(p)
        if not c:
            self.ok = False
        elif len(c) == 1:
            self._assign(c[0], -1)
            if self._propagate() >= 0:
                self.ok = False
        else:
            self._attach(c, 0)

    def _attach(self, c: list, lbd: int) -> int:
        ci = len(self.clauses)
        self.clauses.append(c)
        self.learnt.append(lbd)
        self.watches[c[0]].append(ci)
        self.watches[c[1]].append(ci)
        return ci

    # -- core -------------------------------------------------------------

    def _assign(self, p: int, reason: int) -> None:
        self.val[p] = 1
        self.val[p ^ 1] = -1
        v = p >> 1
        self.level[v] = len(self.trail_lim)
        self.reason[v] = reason
        self.trail.append(p)

    def _propagate(self) -> int:
        """Unit propagation; returns a conflicting clause index or -1."""
        val = self.val
        clauses = self.clauses
        watches = self.watches
        trail = self.trail
        level = self.level
        reason = self.reason
        dl = len(self.trail_lim)
        start = qhead = self.qhead
        confl = -1
        while qhead < len(trail):
            false_lit = trail[qhead] ^ 1
            qhead += 1
            ws = watches[false_lit]
            watches[false_lit] = kept = []
            keep = kept.append
            for pos, ci in enumerate(ws):
                c = clauses[ci]
                if c is None:
                    continue
                first = c[0]
                if first == false_lit:
                    first = c[1]
                    c[0] = first
                    c[1] = false_lit
                if val[first] == 1:
                    keep(ci)
                    continue
                for k in range(2, len(c)):
                    q = c[k]
                    if val[q] != -1:
                        c[1] = q
                        c[k] = false_lit
                        watches[q].append(ci)
                        break
                else:
                    keep(ci)
                    if val[first] == -1:
                        kept.extend(x for x in ws[pos + 1:] if clauses[x] is not None)
                        confl = ci
                        break
                    val[first] = 1
                    val[first ^ 1] = -1
                    v = first >> 1
                    level[v] = dl
                    reason[v] = ci
                    trail.append(first)
            if confl >= 0:
                qhead = len(trail)
                break
        self.stats["propagations"] += qhead - start
        self.qhead = qhead
        return confl

    def _backtrack(self, lvl: int) -> None:
        if len(self.trail_lim) <= lvl:
            return
        val = self.val
        polarity = self.polarity
        activity = self.activity
        heap = self.heap
        in_heap = self.in_heap
        stop = self.trail_lim[lvl]
        # reason/level of unassigned variables are never read, so they are left stale
        for p in self.trail[stop:]:
            v = p >> 1
            val[p] = 0
            val[p ^ 1] = 0
            polarity[v] = not (p & 1)
            if not in_heap[v]:
                in_heap[v] = True
                heapq.heappush(heap, (-activity[v], v))
        del self.trail[stop:]
        del self.trail_lim[lvl:]
        self.qhead = len(self.trail)

    def _bump(self, v: int) -> None:
        a = self.activity[v] + self.var_inc
        self.activity[v] = a
        if a > 1e100:
            self.activity = [x * 1e-100 for x in self.activity]
            self.var_inc *= 1e-100
            self._rebuild_heap()
        else:
            self.in_heap[v] = True
            heapq.heappush(self.heap, (-a, v))

    def _rebuild_heap(self) -> None:
        n = self.num_vars
        self.heap = [(-self.activity[u], u) for u in range(1, n + 1) if self.val[2 * u] == 0]
        heapq.heapify(self.heap)
        self.in_heap = [False] * (n + 1)
        for _, u in self.heap:
            self.in_heap[u] = True

    def _pick_branch(self) -> int:
        heap = self.heap
        val = self.val
        activity = self.activity
        if len(self.trail) == self.num_vars:
            return -1
        # lazy heap: an entry is current iff it carries the variable's present activity
        while heap:
            neg_a, v = heapq.heappop(heap)
            if -neg_a != activity[v]:
                continue
            self.in_heap[v] = False
            if val[2 * v] == 0:
                return 2 * v if self.polarity[v] else 2 * v + 1
        self._rebuild_heap()
        if not self.heap:
            return -1
        return self._pick_branch()

    def _analyze(self, confl: int):
        seen = self.seen
        level = self.level
        reason = self.reason
        trail = self.trail
        clauses = self.clauses
        dl = len(self.trail_lim)
        learnt = [0]
        to_clear = []
        path = 0
        p = -1
        idx = len(trail) - 1
        ci = confl
        while True:
            c = clauses[ci]
            for q in (c if p == -1 else c[1:]):
                v = q >> 1
                if not seen[v] and level[v] > 0:
                    seen[v] = True
                    to_clear.append(v)
                    self._bump(v)
                    if level[v] >= dl:
                        path += 1
                    else:
                        learnt.append(q)
            while not seen[trail[idx] >> 1]:
                idx -= 1
            p = trail[idx]
            idx -= 1
            path -= 1
            if path == 0:
                break
            ci = reason[p >> 1]
        learnt[0] = p ^ 1
        # drop literals implied by the rest of the clause (local minimization)
        kept = [learnt[0]]
        for q in learnt[1:]:
            r = reason[q >> 1]
            if r < 0:
                kept.append(q)
                continue
            for x in clauses[r][1:]:
                u = x >> 1
                if not seen[u] and level[u] > 0:
                    kept.append(q)
                    break
        for v in to_clear:
            seen[v] = False
        learnt = kept
        if len(learnt) == 1:
            bt = 0
        else:
            mi = max(range(1, len(learnt)), key=lambda k: level[learnt[k] >> 1])
            learnt[1], learnt[mi] = learnt[mi], learnt[1]
            bt = level[learnt[1] >> 1]
        lbd = len({level[q >> 1] for q in learnt})
        return learnt, bt, lbd

    def _reduce_db(self) -> None:
        locked = set()
        for p in self.trail:
            r = self.reason[p >> 1]
            if r >= 0:
                locked.add(r)
        cands = [ci for ci, lbd in enumerate(self.learnt)
                 if lbd > self.config.keep_lbd and self.clauses[ci] is not None and ci not in locked]
        cands.sort(key=lambda ci: (-self.learnt[ci], -ci))
        for ci in cands[: len(cands) // 2]:
            self.clauses[ci] = None
            self.num_learnts -= 1
            self.stats["deleted"] += 1
        for ws in self.watches:
            ws[:] = [ci for ci in ws if self.clauses[ci] is not None]

    def solve(self, assumptions: Sequence[int] = ()) -> SolveResult:
        self.stats["solves"] += 1
        assumps = []
        for lit in assumptions:
            if lit == 0 or abs(lit) > self.num_vars:
                raise SolverError(f"assumption {lit} outside variable bound {self.num_vars}")
            assumps.append(_ilit(lit))
        if not self.ok:
            return SolveResult(Status.UNSAT, stats=dict(self.stats))
        # Levels 1..k of the trail still hold the previous call's first k
        # assumptions; keep the ones shared with this call.
        keep = 0
        prev = self._prev_assumps
        limit = min(len(prev), len(assumps), len(self.trail_lim))
        while keep < limit and prev[keep] == assumps[keep]:
            keep += 1
        self._backtrack(keep)
        self._prev_assumps = assumps
        if keep == 0 and self._propagate() >= 0:
            self.ok = False
            return SolveResult(Status.UNSAT, stats=dict(self.stats))

        budget = self.config.conflict_budget
        conflicts = 0
        restart_no = 0
        restart_at = luby(restart_no) * self.config.restart_base
        since_restart = 0
        decay = 1.0 / self.config.var_decay
        while True:
            confl = self._propagate()
            if confl >= 0:
                conflicts += 1
                since_restart += 1
                self.stats["conflicts"] += 1
                if not self.trail_lim:
                    self.ok = False
                    return SolveResult(Status.UNSAT, stats=dict(self.stats))
                learnt, bt, lbd = self._analyze(confl)
                self._backtrack(bt)
                if len(learnt) == 1:
                    self._assign(learnt[0], -1)
                else:
                    ci = self._attach(learnt, lbd)
                    self.num_learnts += 1
                    self.stats["learned"] += 1
                    self._assign(learnt[0], ci)
                self.var_inc *= decay
                continue
            if budget is not None and conflicts >= budget:
                return SolveResult(Status.BUDGET, stats=dict(self.stats))
            if since_restart >= restart_at:
                restart_no += 1
                restart_at = luby(restart_no) * self.config.restart_base
                since_restart = 0
                self.stats["restarts"] += 1
                self._backtrack(0)
                continue
            if self.num_learnts - len(self.trail) >= self.max_learnts:
                self._reduce_db()
                self.max_learnts = int(self.max_learnts * 1.1) + 1
            nxt = -1
            while len(self.trail_lim) < len(assumps):
                p = assumps[len(self.trail_lim)]
                if self.val[p] == 1:
                    self.trail_lim.append(len(self.trail))
                elif self.val[p] == -1:
                    return SolveResult(Status.UNSAT, stats=dict(self.stats))
                else:
                    nxt = p
                    break
            if nxt < 0:
                nxt = self._pick_branch()
                if nxt < 0:
                    return self._finish_sat()
                self.stats["decisions"] += 1
            self.trail_lim.append(len(self.trail))
            self._assign(nxt, -1)

    def _finish_sat(self) -> SolveResult:
        model = [None] + [x == 1 for x in self.val[2::2]]
        bad = self._violated(model)
        if bad is not None:
            raise SolverError(f"internal error: model violates clause {bad}")
        return SolveResult(Status.SAT, model, dict(self.stats))

    def _violated(self, model):
        """First original clause falsified by ``model``, or None."""
        if not self.originals:
            return None
        if self._check_arr is None:
            width = max(len(c) for c in self.originals)
            arr = np.zeros((len(self.originals), max(width, 1)), dtype=np.int64)
            for i, c in enumerate(self.originals):
                arr[i, :len(c)] = c
            self._check_arr = (arr, np.abs(arr), arr > 0, arr < 0)
        arr, idx, pos, neg = self._check_arr
        vals = np.array([False] + model[1:], dtype=bool)[idx]
        ok = ((pos & vals) | (neg & ~vals)).any(axis=1)
        if ok.all():
            return None
        return self.originals[int(np.argmin(ok))]


def solve_cnf(formula: CnfFormula, assumptions: Sequence[int] = (), config: SolverConfig | None = None) -> SolveResult:
    return CdclSolver.from_formula(formula, config).solve(assumptions)


# ---------------------------------------------------------------------------
# external DIMACS solvers


def parse_solver_output(text: str, num_vars: int) -> SolveResult:
    verdict = None
    lits = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("s "):
            verdict = line[2:].strip()
        elif line.startswith("v "):
            for tok in line[2:].split():
                try:
                    lit = int(tok)
                except ValueError:
                    raise BackendError(f"unparseable value line {line!r}") from None
                if lit != 0:
                    lits.append(lit)
    if verdict == "UNSATISFIABLE":
        return SolveResult(Status.UNSAT)
    if verdict == "SATISFIABLE":
        model = [None] + [False] * num_vars
        for lit in lits:
            if abs(lit) <= num_vars:
                model[abs(lit)] = lit > 0
        return SolveResult(Status.SAT, model)
    if verdict == "UNKNOWN":
        return SolveResult(Status.BUDGET)
    raise BackendError("solver output has no 's SATISFIABLE' / 's UNSATISFIABLE' line")


def solve_external(formula: CnfFormula, command: str, assumptions: Sequence[int] = (),
                   timeout: float | None = None) -> SolveResult:
    """Run an external DIMACS solver; assumptions are passed as unit clauses."""
    query = formula.with_units(assumptions) if assumptions else formula
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "query.cnf"
        write_dimacs(query, path)
        try:
            proc = subprocess.run(shlex.split(command) + [str(path)], capture_output=True, text=True,
                                  timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as e:
            raise BackendError(f"external solver failed to run: {e}") from None
    try:
        res = parse_solver_output(proc.stdout, formula.num_vars)
    except BackendError as e:
        raise BackendError(f"{e} (exit code {proc.returncode}): {proc.stderr.strip()[:200]}") from None
    if res.is_sat and not evaluate(query, res.model):
        raise BackendError("external solver returned a model that violates the formula")
    return res


class InternalBackend:
    """Incremental CDCL solver kept in sync with a growing formula."""

    name = "internal"

    def __init__(self, formula: CnfFormula, config: SolverConfig | None = None):
        self.formula = formula
        self.solver = CdclSolver(formula.num_vars, config)
        self._loaded = 0
        self.calls = 0

    def _sync(self):
        self.solver.reserve(self.formula.num_vars)
        clauses = self.formula.clauses
        while self._loaded < len(clauses):
            self.solver.add_clause(clauses[self._loaded])
            self._loaded += 1

    def solve(self, assumptions: Sequence[int] = ()) -> SolveResult:
        self._sync()
        self.calls += 1
        return self.solver.solve(assumptions)

    @property
    def stats(self) -> dict:
        return dict(self.solver.stats, calls=self.calls)


class ExternalBackend:
    name = "external"

    def __init__(self, formula: CnfFormula, command: str, timeout: float | None = None):
        self.formula = formula
        self.command = command
        self.timeout = timeout
        self.calls = 0

    def solve(self, assumptions: Sequence[int] = ()) -> SolveResult:
        self.calls += 1
        return solve_external(self.formula, self.command, assumptions, self.timeout)

    @property
    def stats(self) -> dict:
        return {"calls": self.calls}


def make_backend(spec: str, formula: CnfFormula, config: SolverConfig | None = None):
    """``internal`` or ``external:<command>``."""
    if spec in ("internal", "", None):
        return InternalBackend(formula, config)
    if spec.startswith("external:"):
        cmd = spec[len("external:"):].strip()
        if not cmd:
            raise ValueError("external backend needs a command: external:<command>")
        return ExternalBackend(formula, cmd)
    raise ValueError(f"unknown backend {spec!r}; use 'internal' or 'external:<command>'")
