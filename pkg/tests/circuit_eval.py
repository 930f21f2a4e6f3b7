"""Evaluate a Tseitin circuit by plain unit propagation from its inputs.

With full biconditionals every gate output is forced once its inputs are,
so propagation alone must assign every variable without falsifying a clause.
"""

from satxai.circuit import lit_value
from satxai.cnf import evaluate


class NotForced(AssertionError):
    pass


def propagate_eval(formula, fixed: dict) -> list:
    val = [None] * (formula.num_vars + 1)
    for v, b in fixed.items():
        val[v] = bool(b)
    changed = True
    while changed:
        changed = False
        for c in formula.clauses:
            free = None
            sat = False
            n_free = 0
            for lit in c:
                x = val[abs(lit)]
                if x is None:
                    n_free += 1
                    free = lit
                elif x == (lit > 0):
                    sat = True
                    break
            if sat:
                continue
            if n_free == 0:
                raise AssertionError(f"clause {c} falsified")
            if n_free == 1:
                val[abs(free)] = free > 0
                changed = True
    missing = [v for v in range(1, formula.num_vars + 1) if val[v] is None]
    if missing:
        raise NotForced(f"variables {missing[:5]} not forced by the inputs")
    assert evaluate(formula, val)
    return val


def signal_value(bv, val) -> int:
    return bv.value(val)


def lit_of(lit, val) -> bool:
    return lit_value(lit, val)
