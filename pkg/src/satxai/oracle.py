"""Brute-force checkers for encoding fidelity, solver verdicts and explanations.

Nothing here calls into the fixed-point, circuit or solver modules. The
reference forward pass below re-derives the integer semantics directly from
the float parameters and formats stored on a ModelSpec, evaluated in batch
over int64 (or Python int) numpy arrays.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Dense, Flatten, ModelSpec, ReLU, TemporalConv, ThresholdStep


class GuardExceeded(ValueError):
    pass


# ---------------------------------------------------------------------------
# reference integer forward pass


def _round_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def _clip(m: np.ndarray, bits: int) -> np.ndarray:
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return np.clip(m, lo, hi)


def _quant(x, bits: int, frac: int) -> np.ndarray:
    return _clip(_round_away(np.asarray(x, dtype=float) * 2.0 ** frac), bits)


def _dtype_for(bits: int):
    return np.int64 if bits <= 62 else object


def reference_logits(model: ModelSpec, inputs) -> np.ndarray:
    """Quantized logit mantissas for a batch of input mantissa grids (B, T, D)."""
    x = np.asarray(inputs)
    if x.ndim == 2:
        x = x[None]
    na, fa = model.act_format.bits, model.act_format.frac
    nw, fw = model.weight_format.bits, model.weight_format.frac
    bits, frac = na, fa
    x = x.astype(np.int64)
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        if isinstance(layer, (Dense, TemporalConv)):
            if isinstance(layer, Dense):
                w = _quant(layer.weights, nw, fw)  # (out, in)
                fan_in = w.shape[1]
            else:
                k = layer.weights.shape[0]
                w = _quant(layer.weights, nw, fw)  # (k, in, out)
                fan_in = k * w.shape[1]
            acc_bits = na + nw + max(0, math.ceil(math.log2(fan_in)))
            b = _quant(layer.bias, acc_bits, fa + fw)
            dt = _dtype_for(acc_bits + 2)
            x = x.astype(dt)
            if isinstance(layer, Dense):
                z = x @ w.T.astype(dt)
            else:
                T = x.shape[1] - k + 1
                z = sum(x[:, j:j + T, :] @ w[j].astype(dt) for j in range(k))
            z = z + b.astype(dt)
            if i == last:
                x = z
                bits, frac = acc_bits + 1, fa + fw
            else:
                # floor shift back to the activation fraction, then saturate
                x = _clip(z // (1 << fw) if fw else z, na).astype(np.int64)
                bits, frac = na, fa
        elif isinstance(layer, ReLU):
            x = np.maximum(x, 0)
        elif isinstance(layer, ThresholdStep):
            thr = int(_quant(layer.threshold, bits, frac))
            one = int(_quant(1.0, bits, frac))
            x = np.where(x >= thr, one, 0).astype(x.dtype)
        elif isinstance(layer, Flatten):
            x = x.reshape(x.shape[0], 1, -1)
        else:
            raise TypeError(f"unsupported layer {type(layer).__name__}")
    return x[:, 0, :]


def reference_predict(model: ModelSpec, inputs) -> np.ndarray:
    """Argmax over reference logits; ``np.argmax`` already picks the lowest index on ties."""
    return np.argmax(reference_logits(model, inputs), axis=1)


def quantize_features(model: ModelSpec, video) -> np.ndarray:
    return _quant(np.asarray(video, dtype=float), model.act_format.bits, model.act_format.frac)


def _grid_of(model: ModelSpec, video, from_mantissas: bool) -> np.ndarray:
    g = np.asarray(video, dtype=np.int64) if from_mantissas else quantize_features(model, video)
    if g.shape != model.input_shape:
        raise ValueError(f"input shape {g.shape} does not match model input {model.input_shape}")
    return g


# ---------------------------------------------------------------------------
# bit-vector enumeration helpers


def _codes_to_grids(codes: np.ndarray, shape, bits: int) -> np.ndarray:
    """Unsigned input codes -> signed mantissa grids. Feature (t, d) uses bits
    [(t*D + d)*bits, ...) of the code, LSB first."""
    T, D = shape
    n = T * D
    shifts = np.arange(n, dtype=np.int64) * bits
    u = (codes[:, None] >> shifts[None, :]) & ((1 << bits) - 1)
    s = np.where(u >= (1 << (bits - 1)), u - (1 << bits), u)
    return s.reshape(-1, T, D)


def _grid_to_code(grid: np.ndarray, bits: int) -> int:
    code = 0
    for i, m in enumerate(np.asarray(grid).reshape(-1)):
        code |= (int(m) & ((1 << bits) - 1)) << (i * bits)
    return code


def _popcount(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.uint64)
    c = np.zeros(a.shape, dtype=np.int64)
    while np.any(a):
        c += (a & np.uint64(1)).astype(np.int64)
        a >>= np.uint64(1)
    return c


# ---------------------------------------------------------------------------
# fidelity


@dataclass
class Mismatch:
    input: list  # mantissa grid
    expected: list | None
    circuit: list | None  # None when the solver answered Unsat

    def to_dict(self) -> dict:
        return {"input": self.input, "expected": self.expected, "circuit": self.circuit}


@dataclass
class FidelityReport:
    checked: int
    exhaustive: bool
    mismatches: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def to_dict(self) -> dict:
        return {
            "checked": self.checked,
            "exhaustive": self.exhaustive,
            "passed": self.passed,
            "mismatches": [m.to_dict() for m in self.mismatches],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def _output_bits(enc):
    """Output literals from the encoding's sidecar metadata (not its decoder)."""
    outs = []
    for o in enc.varmap.meta["outputs"]:
        outs.append(o["lits"])
    return outs


def _decode_signed(lits, model_vals) -> int:
    u = 0
    for b, lit in enumerate(lits):
        if lit == "T":
            bit = 1
        elif lit == "F":
            bit = 0
        else:
            v = bool(model_vals[abs(lit)])
            bit = int(v if lit > 0 else not v)
        u |= bit << b
    if u >> (len(lits) - 1):
        u -= 1 << len(lits)
    return u


def _input_var_table(enc, shape, bits):
    roles = enc.varmap.input_bits()
    T, D = shape
    return [roles[(t, d, b)] for t in range(T) for d in range(D) for b in range(bits)]


def _check_codes(model, enc, codes, backend):
    shape = model.input_shape
    bits = model.act_format.bits
    in_vars = _input_var_table(enc, shape, bits)
    outs = _output_bits(enc)
    expected = reference_logits(model, _codes_to_grids(codes, shape, bits))
    from .solver import make_backend
    backend = make_backend(backend, enc.formula)
    order = list(range(len(in_vars)))[::-1]  # high positions first so Gray-code toggles land last
    bad = []
    for idx, code in enumerate(codes.tolist()):
        assum = [in_vars[i] if (code >> i) & 1 else -in_vars[i] for i in order]
        res = backend.solve(assum)
        grid = _codes_to_grids(np.array([code]), shape, bits)[0].tolist()
        exp = [int(v) for v in expected[idx]]
        if not res.is_sat:
            bad.append((code, Mismatch(grid, exp, None)))
            continue
        got = [_decode_signed(lits, res.model) for lits in outs]
        if got != exp:
            bad.append((code, Mismatch(grid, exp, got)))
    return bad


def _run_chunks(model, enc, codes, backend, jobs):
    if jobs <= 1 or len(codes) < 2 * jobs:
        bad = _check_codes(model, enc, codes, backend)
    else:
        chunks = np.array_split(codes, jobs)
        n = len(chunks)
        with ProcessPoolExecutor(jobs) as ex:
            parts = list(ex.map(_check_codes, [model] * n, [enc] * n, chunks, [backend] * n))
        bad = [m for p in parts for m in p]
    bad.sort(key=lambda cm: cm[0])
    return [m for _, m in bad]


def exhaustive_fidelity(model: ModelSpec, enc, *, backend: str = "internal", guard: int = 20,
                        jobs: int = 1) -> FidelityReport:
    """Solve under every input bit vector and compare decoded logits to the reference pass.

    Inputs are visited in Gray-code order so consecutive assumption lists differ
    in a single bit, which lets an incremental solver keep most of its trail.
    """
    n = model.input_bits
    if n > guard:
        raise GuardExceeded(f"{n} input bits exceeds the exhaustive guard of {guard}; use sampled_fidelity")
    i = np.arange(1 << n, dtype=np.int64)
    codes = i ^ (i >> 1)
    bad = _run_chunks(model, enc, codes, backend, jobs)
    return FidelityReport(int(len(codes)), True, bad)


def sampled_fidelity(model: ModelSpec, enc, n: int, seed: int, *, backend: str = "internal",
                     jobs: int = 1) -> FidelityReport:
    bits = model.input_bits
    rng = np.random.default_rng(seed)
    per = model.act_format.bits
    nfeat = bits // per
    # draw each feature's code separately so wide inputs never overflow int64
    parts = rng.integers(0, 1 << per, size=(n, nfeat), dtype=np.int64)
    if bits <= 62:
        codes = np.zeros(n, dtype=np.int64)
        for j in range(nfeat):
            codes |= parts[:, j] << (j * per)
        bad = _run_chunks(model, enc, codes, backend, jobs)
    else:
        raise GuardExceeded("sampled fidelity supports at most 62 input bits")
    return FidelityReport(n, False, bad)


# ---------------------------------------------------------------------------
# DPLL


@dataclass
class DpllResult:
    sat: bool
    model: list | None  # index 0 unused

    @property
    def is_sat(self) -> bool:
        return self.sat

    @property
    def is_unsat(self) -> bool:
        return not self.sat


def dpll_reference(formula) -> DpllResult:
    """Plain recursive DPLL with unit propagation; no learning, no heuristics."""
    n = formula.num_vars
    clauses = [list(c) for c in formula.clauses]

    def simplify(cls, lit):
        out = []
        for c in cls:
            if lit in c:
                continue
            if -lit in c:
                c = [x for x in c if x != -lit]
                if not c:
                    return None
            out.append(c)
        return out

    def rec(cls, assign):
        while True:
            unit = next((c[0] for c in cls if len(c) == 1), None)
            if unit is None:
                break
            assign = {**assign, abs(unit): unit > 0}
            cls = simplify(cls, unit)
            if cls is None:
                return None
        if not cls:
            return assign
        v = abs(cls[0][0])
        for lit in (v, -v):
            sub = simplify(cls, lit)
            if sub is None:
                continue
            r = rec(sub, {**assign, v: lit > 0})
            if r is not None:
                return r
        return None

    if any(len(c) == 0 for c in clauses):
        return DpllResult(False, None)
    res = rec(clauses, {})
    if res is None:
        return DpllResult(False, None)
    return DpllResult(True, [False] + [res.get(v, False) for v in range(1, n + 1)])


# ---------------------------------------------------------------------------
# explanation oracles


def _all_codes(nbits: int) -> np.ndarray:
    return np.arange(1 << nbits, dtype=np.int64)


def brute_force_min_cxp(model: ModelSpec, video, c2: int, granularity: str = "bits", *,
                        from_mantissas: bool = False, guard: int = 12):
    """Minimum Hamming cost (bits or changed features) reaching class ``c2``, or None if unreachable.

    Returns ``(cost, witness_grid)``.
    """
    if granularity not in ("bits", "features"):
        raise ValueError("granularity must be 'bits' or 'features'")
    nbits = model.input_bits
    if nbits > guard:
        raise GuardExceeded(f"{nbits} input bits exceeds the brute-force guard of {guard}")
    shape, per = model.input_shape, model.act_format.bits
    orig = _grid_of(model, video, from_mantissas)
    ocode = _grid_to_code(orig, per)
    codes = _all_codes(nbits)
    grids = _codes_to_grids(codes, shape, per)
    preds = reference_predict(model, grids)
    if granularity == "bits":
        dist = _popcount(codes ^ ocode)
    else:
        dist = np.sum((grids != orig[None]).reshape(len(codes), -1), axis=1)
    for d in range(int(dist.max()) + 1):
        hit = np.nonzero((dist == d) & (preds == c2))[0]
        if len(hit):
            return d, grids[hit[0]].tolist()
    return None


def brute_force_axp_check(model: ModelSpec, video, fixed, c: int, *, from_mantissas: bool = False,
                          guard: int = 20) -> bool:
    """True iff every completion of the unfixed features predicts ``c``."""
    shape, per = model.input_shape, model.act_format.bits
    orig = _grid_of(model, video, from_mantissas)
    fixed = set(map(tuple, fixed))
    free = [(t, d) for t in range(shape[0]) for d in range(shape[1]) if (t, d) not in fixed]
    nfree = len(free) * per
    if nfree > guard:
        raise GuardExceeded(f"{nfree} free bits exceeds the brute-force guard of {guard}")
    codes = _all_codes(nfree)
    vals = _codes_to_grids(codes, (1, len(free)), per).reshape(len(codes), len(free)) if free else \
        np.zeros((1, 0), dtype=np.int64)
    grids = np.repeat(orig[None], len(vals), axis=0)
    for j, (t, d) in enumerate(free):
        grids[:, t, d] = vals[:, j]
    return bool(np.all(reference_predict(model, grids) == c))
