"""Compile a quantized model into CNF, plus switchable query constraints.

The circuit mirrors :func:`satxai.model.quantized_trace` gadget for gadget:
the same widened formats, the same requantization points, the same
comparison rule for argmax. Weights and biases are folded in as constants.
Input bits are free variables; concrete inputs are imposed via assumptions.
Every query constraint is guarded by a fresh activation literal and is only
in force when that literal is assumed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .circuit import FALSE, TRUE, BitVec, CircuitBuilder, is_const
from .cnf import (
    ActivationBit,
    CardinalityAux,
    CnfFormula,
    FlipIndicator,
    InputFeatureBit,
    OutputLogitBit,
    QueryGuard,
    TseitinAux,
    VarMap,
)
from .fixedpoint import QuantizedValue, quantize, to_bits
from .model import (
    LINEAR,
    Dense,
    Flatten,
    ModelError,
    ModelSpec,
    ReLU,
    TemporalConv,
    ThresholdStep,
    quantize_input,
)

log = logging.getLogger(__name__)


class EncodingError(ValueError):
    pass


def _lit_json(lit):
    if is_const(lit):
        return "T" if lit is TRUE else "F"
    return lit


@dataclass
class FlipSet:
    granularity: str  # "bits" | "features"
    indicators: dict  # (t, d, b) or (t, d) -> var
    original: tuple  # mantissa grid

    @property
    def lits(self) -> list:
        return [self.indicators[k] for k in sorted(self.indicators)]

    def __len__(self):
        return len(self.indicators)

    def flipped(self, model) -> list:
        return [k for k in sorted(self.indicators) if model[self.indicators[k]]]


@dataclass
class EncodedModel:
    model: ModelSpec
    builder: CircuitBuilder
    inputs: list  # [t][d] -> BitVec
    outputs: list  # per class BitVec
    _cmp: dict = field(default_factory=dict)
    _argmax: dict = field(default_factory=dict)
    _guards: dict = field(default_factory=dict)
    _flips: dict = field(default_factory=dict)
    _counters: int = 0

    @property
    def formula(self) -> CnfFormula:
        return self.builder.formula

    @property
    def varmap(self) -> VarMap:
        return self.builder.varmap

    @property
    def num_classes(self) -> int:
        return len(self.outputs)

    def feature_keys(self) -> list:
        t_max, d_max = self.model.input_shape
        return [(t, d) for t in range(t_max) for d in range(d_max)]

    def input_lits(self) -> list:
        return [lit for row in self.inputs for bv in row for lit in bv.lits]

    def guard(self, label: str) -> int | None:
        return self._guards.get(label)

    def new_guard(self, label: str) -> int:
        g = self.builder.new_var(QueryGuard(label))
        self._guards[label] = g
        self.varmap.meta.setdefault("guards", {})[label] = g
        return g

    def compare(self, a: int, b: int):
        key = (a, b)
        if key not in self._cmp:
            self._cmp[key] = self.builder.cmp_signed(self.outputs[a], self.outputs[b])
        return self._cmp[key]

    def argmax_lit(self, c: int):
        """Literal true iff class ``c`` wins argmax with the lowest-index tie-break."""
        if c not in self._argmax:
            conds = []
            for k in range(self.num_classes):
                if k == c:
                    continue
                gt, ge = self.compare(c, k)
                conds.append(gt if k < c else ge)
            self._argmax[c] = self.builder.and_(*conds)
        return self._argmax[c]

    def decode_outputs(self, model) -> list:
        return [bv.value(model) for bv in self.outputs]

    def decode_input(self, model) -> list:
        return [[bv.value(model) for bv in row] for row in self.inputs]


def _tag_layer(builder: CircuitBuilder, layer_idx: int, grid: list, final: bool) -> None:
    roles = builder.varmap.roles
    unit = 0
    for row in grid:
        for bv in row:
            for b, lit in enumerate(bv.lits):
                if is_const(lit):
                    continue
                v = abs(lit)
                if isinstance(roles.get(v), TseitinAux):
                    roles[v] = OutputLogitBit(unit, b) if final else ActivationBit(layer_idx, unit, b)
            unit += 1


def encode_model(model: ModelSpec) -> EncodedModel:
    b = CircuitBuilder()
    afmt, wfmt = model.act_format, model.weight_format
    rows, cols = model.input_shape
    inputs = [[b.inputs(afmt, lambda bit, t=t, d=d: InputFeatureBit(t, d, bit)) for d in range(cols)]
              for t in range(rows)]
    grid = [list(r) for r in inputs]
    fmt = afmt
    n_layers = len(model.layers)
    constants = b.varmap.constants
    for i, layer in enumerate(model.layers):
        final = i == n_layers - 1
        if isinstance(layer, LINEAR):
            if fmt != afmt:
                raise EncodingError(f"layer {i}: linear layer input must be in the activation format")
            p = model.quantized_params[i]
            target = None if final else afmt

            def neuron(xs, ws, bias):
                terms = [b.mul_by_const(x, QuantizedValue(wfmt, int(w))) for x, w in zip(xs, ws)]
                acc = b.sum_signals(terms, p.sum_format)
                out = b.add_signed(acc, b.constant(int(bias), p.bias_format))
                assert out.fmt == p.out_format
                return out if target is None else b.requantize(out, target)

            if isinstance(layer, Dense):
                grid = [[neuron(row, p.weights[j], p.bias[j]) for j in range(layer.n_out)] for row in grid]
            else:
                k = layer.kernel_frames
                new = []
                for t in range(len(grid) - k + 1):
                    xs = [x for r in grid[t:t + k] for x in r]
                    new.append([neuron(xs, p.weights[:, :, o].reshape(-1), p.bias[o])
                                for o in range(layer.n_out)])
                grid = new
            fmt = p.out_format if final else afmt
            for idx, m in np.ndenumerate(p.weights):
                constants.append({"layer": i, "kind": "weight", "index": list(idx), "mantissa": int(m),
                                  "format": wfmt.to_dict()})
            for j, m in enumerate(p.bias):
                constants.append({"layer": i, "kind": "bias", "index": [j], "mantissa": int(m),
                                  "format": p.bias_format.to_dict()})
        elif isinstance(layer, ReLU):
            grid = [[b.relu(x) for x in row] for row in grid]
        elif isinstance(layer, ThresholdStep):
            thr = b.constant(quantize(layer.threshold, fmt).mantissa, fmt)
            one_bits = to_bits(quantize(1.0, fmt).mantissa, fmt.bits)

            def step(x):
                _, ge = b.cmp_signed(x, thr)
                return BitVec([ge if bit else FALSE for bit in one_bits], fmt)

            grid = [[step(x) for x in row] for row in grid]
        elif isinstance(layer, Flatten):
            grid = [[x for row in grid for x in row]]
        else:
            raise EncodingError(f"unsupported layer {type(layer).__name__} at index {i}")
        _tag_layer(b, i, grid, final)
    outputs = grid[0]
    if len(grid) != 1 or len(outputs) != model.num_classes:
        raise EncodingError("final layer does not produce one row of num_classes logits")
    if not model.layers:
        _tag_layer(b, -1, grid, True)
    b.varmap.meta.update({
        "input_shape": list(model.input_shape),
        "act_format": afmt.to_dict(),
        "weight_format": wfmt.to_dict(),
        "num_classes": model.num_classes,
        "outputs": [{"format": bv.fmt.to_dict(), "lits": [_lit_json(l) for l in bv.lits]} for bv in outputs],
    })
    return EncodedModel(model, b, inputs, outputs)


def _input_grid(enc: EncodedModel, video, from_mantissas: bool) -> np.ndarray:
    if from_mantissas:
        grid = np.asarray(video, dtype=object)
        if grid.shape != enc.model.input_shape:
            raise ModelError(f"input shape {grid.shape} does not match model input {enc.model.input_shape}")
        return grid
    return quantize_input(enc.model, video)


def input_assumptions(enc: EncodedModel, video, features: Iterable | None = None,
                      *, from_mantissas: bool = False) -> list:
    """One literal per input bit of the chosen features, polarity = the bit's value."""
    grid = _input_grid(enc, video, from_mantissas)
    keys = enc.feature_keys() if features is None else sorted(features)
    out = []
    for t, d in keys:
        bv = enc.inputs[t][d]
        for lit, bit in zip(bv.lits, to_bits(int(grid[t, d]), len(bv))):
            out.append(lit if bit else -lit)
    return out


def _check_class(enc: EncodedModel, c: int) -> None:
    if not 0 <= c < enc.num_classes:
        raise EncodingError(f"class {c} out of range [0, {enc.num_classes})")


def _guarded(enc: EncodedModel, label: str, lit) -> int:
    g = enc.guard(label)
    if g is not None:
        return g
    g = enc.new_guard(label)
    if lit is FALSE:
        enc.builder.clause([-g])
    elif lit is not TRUE:
        enc.builder.clause([-g, lit])
    return g


def constrain_output_is(enc: EncodedModel, c: int) -> int:
    _check_class(enc, c)
    return _guarded(enc, f"output_is:{c}", enc.argmax_lit(c))


def constrain_output_not(enc: EncodedModel, c: int) -> int:
    _check_class(enc, c)
    if enc.num_classes == 1:
        log.warning("output_not on a single-class model is unsatisfiable by construction")
    others = [enc.argmax_lit(k) for k in range(enc.num_classes) if k != c]
    return _guarded(enc, f"output_not:{c}", enc.builder.or_(*others))


def flip_variables(enc: EncodedModel, original, granularity: str = "bits", *,
                   from_mantissas: bool = False) -> FlipSet:
    if granularity not in ("bits", "features"):
        raise ValueError("granularity must be 'bits' or 'features'")
    grid = _input_grid(enc, original, from_mantissas)
    key = (granularity, tuple(int(v) for v in grid.reshape(-1)))
    if key in enc._flips:
        return enc._flips[key]
    b = enc.builder
    indicators = {}
    for t, d in enc.feature_keys():
        bv = enc.inputs[t][d]
        # literal that is true exactly when the bit differs from the original
        diffs = [(lit if bit == 0 else -lit) for lit, bit in zip(bv.lits, to_bits(int(grid[t, d]), len(bv)))]
        if granularity == "bits":
            for bit, x in enumerate(diffs):
                f = b.new_var(FlipIndicator(t, d, bit))
                b.clause([-f, x])
                b.clause([f, -x])
                indicators[(t, d, bit)] = f
        else:
            g = b.new_var(FlipIndicator(t, d, None))
            b.clause([-g] + diffs)
            for x in diffs:
                b.clause([g, -x])
            indicators[(t, d)] = g
    fs = FlipSet(granularity, indicators, tuple(map(tuple, grid.tolist())))
    enc._flips[key] = fs
    return fs


class SequentialCounter:
    """Unary running counter over ``lits``; registers only ever forced upward.

    ``reg[i][j-1]`` is implied whenever at least ``j`` of ``lits[:i+1]`` are
    true, for ``j`` up to ``capacity + 1``. Bounding the final register row
    then yields at-most-k constraints for every ``k <= capacity``.
    """

    def __init__(self, enc: EncodedModel, lits: Sequence[int], capacity: int):
        self.enc = enc
        self.lits = list(lits)
        self.capacity = capacity
        b = enc.builder
        width = min(capacity + 1, len(self.lits))
        self.width = width
        self.reg = []
        prev = None
        for x in self.lits:
            row = [b.new_var(CardinalityAux()) for _ in range(width)]
            if width:
                b.clause([-x, row[0]])
            if prev is not None:
                for j in range(width):
                    b.clause([-prev[j], row[j]])
                    if j > 0:
                        b.clause([-x, -prev[j - 1], row[j]])
            self.reg.append(row)
            prev = row
        self._guards = {}
        self.index = enc._counters
        enc._counters += 1

    def at_most(self, k: int) -> int:
        if k < 0 or k > self.capacity:
            raise ValueError(f"bound {k} outside counter capacity [0, {self.capacity}]")
        if k in self._guards:
            return self._guards[k]
        g = self.enc.new_guard(f"at_most:{self.index}:{k}")
        if k < len(self.lits):
            self.enc.builder.clause([-g, -self.reg[-1][k]])
        self._guards[k] = g
        return g


def cardinality_at_most(enc: EncodedModel, flips: FlipSet | Sequence[int], k: int) -> int:
    lits = flips.lits if isinstance(flips, FlipSet) else list(flips)
    if not 0 <= k <= len(lits):
        raise ValueError(f"bound {k} outside [0, {len(lits)}]")
    return SequentialCounter(enc, lits, k).at_most(k)
