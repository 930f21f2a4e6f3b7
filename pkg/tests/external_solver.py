"""Minimal DIMACS front end over pycosat (PicoSAT), used as an independent external solver.

Usage: python external_solver.py FILE.cnf
Prints the standard "s ..." and "v ..." lines.
"""

import sys

import pycosat


def main(path: str) -> int:
    clauses = []
    cur = []
    with open(path) as fh:
        for line in fh:
            if line.startswith(("c", "p")):
                continue
            for tok in line.split():
                lit = int(tok)
                if lit == 0:
                    clauses.append(cur)
                    cur = []
                else:
                    cur.append(lit)
    if any(not c for c in clauses):
        print("s UNSATISFIABLE")
        return 20
    res = pycosat.solve(clauses)
    if res == "UNSAT":
        print("s UNSATISFIABLE")
        return 20
    print("s SATISFIABLE")
    print("v " + " ".join(map(str, res)) + " 0")
    return 10


if __name__ == "__main__":
    sys.exit(main(sys.argv[1]))
