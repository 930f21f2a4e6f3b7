import random
import sys
from pathlib import Path

from satxai.cnf import CnfFormula

EXTERNAL_SOLVER = f"{sys.executable} {Path(__file__).parent / 'external_solver.py'}"


def have_pycosat() -> bool:
    try:
        import pycosat  # noqa: F401
    except ImportError:
        return False
    return True


def random_3sat(rng: random.Random, n: int, m: int) -> CnfFormula:
    f = CnfFormula(n)
    for _ in range(m):
        vs = rng.sample(range(1, n + 1), 3)
        f.add_clause([v if rng.random() < 0.5 else -v for v in vs])
    return f
