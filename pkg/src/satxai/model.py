"""Layered video classifier: float and bit-exact quantized forward passes, file format.

Activations flow as a 2-D grid of shape ``(rows, width)``. The input grid is
``(input_frames, input_features)``. ``Dense`` maps every row independently,
``TemporalConv`` slides a ``k``-frame window over rows, ``Flatten`` folds the
grid into a single row. The final grid must be ``(1, num_classes)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .fixedpoint import (
    FixedPointFormat,
    QuantizedValue,
    dequantize,
    quantize,
    requantize,
    sum_format,
    widened_mul,
    widened_sum,
)


class ModelError(ValueError):
    """Malformed model file or shape mismatch."""


@dataclass(frozen=True, eq=False)
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    kind = "dense"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2:
            raise ModelError("dense weights must be a 2-D (out x in) matrix")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class TemporalConv:
    weights: np.ndarray  # (k, in, out)
    bias: np.ndarray  # (out,)

    kind = "temporal_conv"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 3:
            raise ModelError("temporal_conv weights must be a 3-D (k x in x out) array")
        if w.shape[0] < 1:
            raise ModelError("temporal_conv kernel_frames must be >= 1")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def kernel_frames(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[2]


@dataclass(frozen=True)
class ReLU:
    kind = "relu"


@dataclass(frozen=True)
class ThresholdStep:
    """Outputs 1 where the pre-activation is >= ``threshold``, else 0."""

    threshold: float

    kind = "threshold"


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"


Layer = Union[Dense, TemporalConv, ReLU, ThresholdStep, Flatten]
LINEAR = (Dense, TemporalConv)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    input_frames: int
    input_features: int
    layers: tuple
    num_classes: int
    weight_format: FixedPointFormat = FixedPointFormat(8, 4)
    act_format: FixedPointFormat = FixedPointFormat(8, 4)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    def validate(self):
        if self.input_frames < 1:
            raise ModelError("input_frames must be >= 1")
        if self.input_features < 1:
            raise ModelError("input_features must be >= 1")
        if self.num_classes < 1:
            raise ModelError("num_classes must be >= 1")
        shape = (self.input_frames, self.input_features)
        for i, layer in enumerate(self.layers):
            shape = _layer_output_shape(layer, shape, i)
        if shape != (1, self.num_classes):
            raise ModelError(
                f"final layer output shape {shape} does not match (1, num_classes={self.num_classes})"
            )

    @property
    def input_shape(self) -> tuple[int, int]:
        return (self.input_frames, self.input_features)

    @property
    def input_bits(self) -> int:
        return self.input_frames * self.input_features * self.act_format.bits

    def shapes(self) -> list[tuple[int, int]]:
        """Grid shape after each layer."""
        out = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = _layer_output_shape(layer, shape, i)
            out.append(shape)
        return out

    @cached_property
    def quantized_params(self) -> dict:
        """Per linear layer index: (weight mantissas, bias mantissas, accumulator formats)."""
        return {i: quantize_linear(layer, self.weight_format, self.act_format)
                for i, layer in enumerate(self.layers) if isinstance(layer, LINEAR)}

    def to_dict(self) -> dict:
        return {
            "input_frames": self.input_frames,
            "input_features": self.input_features,
            "num_classes": self.num_classes,
            "quantization": {
                "weights": self.weight_format.to_dict(),
                "activations": self.act_format.to_dict(),
            },
            "layers": [_layer_to_dict(layer) for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            q = d["quantization"]
            wfmt = FixedPointFormat.from_dict(q["weights"])
            afmt = FixedPointFormat.from_dict(q["activations"])
            layers = [_layer_from_dict(ld, i) for i, ld in enumerate(d["layers"])]
            return cls(int(d["input_frames"]), int(d["input_features"]), tuple(layers),
                       int(d["num_classes"]), wfmt, afmt)
        except KeyError as e:
            raise ModelError(f"missing field {e.args[0]!r}") from None
        except (TypeError, ValueError) as e:
            if isinstance(e, ModelError):
                raise
            raise ModelError(str(e)) from None

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))

    def with_formats(self, weight_format: FixedPointFormat, act_format: FixedPointFormat) -> "ModelSpec":
        return ModelSpec(self.input_frames, self.input_features, self.layers, self.num_classes,
                         weight_format, act_format)


def _layer_output_shape(layer, shape, i):
    rows, width = shape
    if isinstance(layer, Dense):
        if layer.n_in != width:
            raise ModelError(f"weight shape mismatch, layer {i}: expects {layer.n_in} inputs, got {width}")
        if layer.bias.shape[0] != layer.n_out:
            raise ModelError(f"bias length mismatch, layer {i}")
        return (rows, layer.n_out)
    if isinstance(layer, TemporalConv):
        if layer.n_in != width:
            raise ModelError(f"weight shape mismatch, layer {i}: expects {layer.n_in} inputs, got {width}")
        if layer.bias.shape[0] != layer.n_out:
            raise ModelError(f"bias length mismatch, layer {i}")
        if layer.kernel_frames > rows:
            raise ModelError(f"kernel_frames {layer.kernel_frames} exceeds {rows} frames, layer {i}")
        return (rows - layer.kernel_frames + 1, layer.n_out)
    if isinstance(layer, (ReLU, ThresholdStep)):
        return shape
    if isinstance(layer, Flatten):
        return (1, rows * width)
    raise ModelError(f"unsupported layer type {type(layer).__name__}, layer {i}")


def _real(x) -> str:
    # repr of a Python float is the shortest round-tripping decimal
    return repr(float(x))


def _layer_to_dict(layer) -> dict:
    if isinstance(layer, Dense):
        return {"type": "dense", "in": layer.n_in, "out": layer.n_out,
                "weights": [_real(x) for x in layer.weights.ravel()],
                "bias": [_real(x) for x in layer.bias]}
    if isinstance(layer, TemporalConv):
        return {"type": "temporal_conv", "kernel_frames": layer.kernel_frames,
                "in": layer.n_in, "out": layer.n_out,
                "weights": [_real(x) for x in layer.weights.ravel()],
                "bias": [_real(x) for x in layer.bias]}
    if isinstance(layer, ThresholdStep):
        return {"type": "threshold", "threshold": _real(layer.threshold)}
    if isinstance(layer, ReLU):
        return {"type": "relu"}
    if isinstance(layer, Flatten):
        return {"type": "flatten"}
    raise ModelError(f"unsupported layer type {type(layer).__name__}")


def _reals(values, what, i) -> np.ndarray:
    try:
        return np.array([float(v) for v in values], dtype=float)
    except (TypeError, ValueError):
        raise ModelError(f"{what} must be an array of decimal strings, layer {i}") from None


def _layer_from_dict(d: dict, i: int):
    t = d.get("type")
    if t == "dense":
        n_in, n_out = int(d["in"]), int(d["out"])
        w = _reals(d["weights"], "weights", i)
        if w.size != n_in * n_out:
            raise ModelError(f"weights length mismatch, layer {i}: expected {n_in * n_out}, got {w.size}")
        b = _reals(d["bias"], "bias", i)
        if b.size != n_out:
            raise ModelError(f"bias length mismatch, layer {i}")
        return Dense(w.reshape(n_out, n_in), b)
    if t == "temporal_conv":
        k, n_in, n_out = int(d["kernel_frames"]), int(d["in"]), int(d["out"])
        if k < 1:
            raise ModelError(f"kernel_frames must be >= 1, layer {i}")
        w = _reals(d["weights"], "weights", i)
        if w.size != k * n_in * n_out:
            raise ModelError(f"weights length mismatch, layer {i}: expected {k * n_in * n_out}, got {w.size}")
        b = _reals(d["bias"], "bias", i)
        if b.size != n_out:
            raise ModelError(f"bias length mismatch, layer {i}")
        return TemporalConv(w.reshape(k, n_in, n_out), b)
    if t == "relu":
        return ReLU()
    if t == "threshold":
        return ThresholdStep(float(d["threshold"]))
    if t == "flatten":
        return Flatten()
    raise ModelError(f"unsupported layer type {t!r}, layer {i}")


def save_model(model: ModelSpec, path) -> None:
    Path(path).write_text(dumps_model(model))


def dumps_model(model: ModelSpec) -> str:
    return json.dumps(model.to_dict(), indent=1) + "\n"


def load_model(path) -> ModelSpec:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ModelError(f"model file is not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ModelError("model file must hold a JSON object")
    return ModelSpec.from_dict(d)


# ---------------------------------------------------------------------------
# forward passes


def _check_input(model: ModelSpec, video) -> np.ndarray:
    x = np.asarray(video, dtype=float)
    if x.shape != model.input_shape:
        raise ModelError(f"input shape {x.shape} does not match model input {model.input_shape}")
    return x


def float_forward(model: ModelSpec, video) -> np.ndarray:
    a = _check_input(model, video)
    for layer in model.layers:
        if isinstance(layer, Dense):
            a = a @ layer.weights.T + layer.bias
        elif isinstance(layer, TemporalConv):
            k = layer.kernel_frames
            rows = a.shape[0] - k + 1
            a = np.stack([np.einsum("ki,kio->o", a[t:t + k], layer.weights) for t in range(rows)]) + layer.bias
        elif isinstance(layer, ReLU):
            a = np.maximum(a, 0.0)
        elif isinstance(layer, ThresholdStep):
            a = (a >= layer.threshold).astype(float)
        elif isinstance(layer, Flatten):
            a = a.reshape(1, -1)
    return a.reshape(-1)


@dataclass(frozen=True)
class LinearParams:
    weights: np.ndarray  # int mantissas, layer weight shape
    bias: np.ndarray  # int mantissas in bias_format
    product_format: FixedPointFormat
    sum_format: FixedPointFormat  # after widened_sum over fan-in terms
    bias_format: FixedPointFormat  # == sum_format
    out_format: FixedPointFormat  # after bias addition
    fan_in: int


def quantize_linear(layer, wfmt: FixedPointFormat, afmt: FixedPointFormat) -> LinearParams:
    """Quantize a linear layer's constants; biases land in the accumulator format."""
    wq = np.vectorize(lambda w: quantize(w, wfmt).mantissa, otypes=[object])(layer.weights)
    prod = FixedPointFormat(afmt.bits + wfmt.bits, afmt.frac + wfmt.frac)
    fan_in = layer.n_in if isinstance(layer, Dense) else layer.kernel_frames * layer.n_in
    acc = sum_format(prod, fan_in)
    bq = np.array([quantize(b, acc).mantissa for b in layer.bias], dtype=object)
    out = sum_format(acc, 2)
    return LinearParams(wq, bq, prod, acc, acc, out, fan_in)


@dataclass
class QuantizedLogits:
    mantissas: list
    fmt: FixedPointFormat

    @property
    def values(self) -> list[float]:
        return [math.ldexp(m, -self.fmt.frac) for m in self.mantissas]


@dataclass
class QuantizedTrace:
    """Every intermediate grid of the quantized pass (mantissas + format)."""

    grids: list = field(default_factory=list)  # list of (np.ndarray of int, FixedPointFormat)

    @property
    def logits(self) -> QuantizedLogits:
        g, fmt = self.grids[-1]
        return QuantizedLogits([int(v) for v in g.reshape(-1)], fmt)


def quantize_input(model: ModelSpec, video) -> np.ndarray:
    x = _check_input(model, video)
    return np.vectorize(lambda v: quantize(v, model.act_format).mantissa, otypes=[object])(x)


def _neuron(terms_x, terms_w, afmt, wfmt, p: LinearParams, bias_m, requant_to):
    prods = [widened_mul(QuantizedValue(afmt, int(x)), QuantizedValue(wfmt, int(w)))
             for x, w in zip(terms_x, terms_w)]
    acc = widened_sum(prods, p.product_format)
    assert acc.fmt == p.sum_format
    out = widened_sum([acc, QuantizedValue(p.bias_format, int(bias_m))])
    assert out.fmt == p.out_format
    if requant_to is not None:
        out = requantize(out, requant_to)
    return out.mantissa


def quantized_trace(model: ModelSpec, video, *, from_mantissas: bool = False) -> QuantizedTrace:
    """Run the reference integer pass, keeping every intermediate grid.

    Linear layers requantize to the activation format, except the last linear
    layer of the network when nothing follows it: its exact accumulator is the
    logit vector.
    """
    afmt, wfmt = model.act_format, model.weight_format
    if from_mantissas:
        a = np.array(video, dtype=object)
        if a.shape != model.input_shape:
            raise ModelError(f"input shape {a.shape} does not match model input {model.input_shape}")
    else:
        a = quantize_input(model, video)
    fmt = afmt
    trace = QuantizedTrace([(a, fmt)])
    n_layers = len(model.layers)
    for i, layer in enumerate(model.layers):
        if isinstance(layer, LINEAR):
            if fmt != afmt:
                raise ModelError(f"layer {i}: linear layer input must be in the activation format")
            p = model.quantized_params[i]
            final = i == n_layers - 1
            target = None if final else afmt
            if isinstance(layer, Dense):
                out = np.empty((a.shape[0], layer.n_out), dtype=object)
                for r in range(a.shape[0]):
                    for j in range(layer.n_out):
                        out[r, j] = _neuron(a[r], p.weights[j], afmt, wfmt, p, p.bias[j], target)
            else:
                k = layer.kernel_frames
                rows = a.shape[0] - k + 1
                out = np.empty((rows, layer.n_out), dtype=object)
                for t in range(rows):
                    xs = a[t:t + k].reshape(-1)
                    for o in range(layer.n_out):
                        ws = p.weights[:, :, o].reshape(-1)
                        out[t, o] = _neuron(xs, ws, afmt, wfmt, p, p.bias[o], target)
            a = out
            fmt = p.out_format if final else afmt
        elif isinstance(layer, ReLU):
            a = np.vectorize(lambda m: max(0, m), otypes=[object])(a)
        elif isinstance(layer, ThresholdStep):
            thr = quantize(layer.threshold, fmt).mantissa
            one = quantize(1.0, fmt).mantissa
            a = np.vectorize(lambda m: one if m >= thr else 0, otypes=[object])(a)
        elif isinstance(layer, Flatten):
            a = a.reshape(1, -1)
        trace.grids.append((a, fmt))
    return trace


def quantized_forward(model: ModelSpec, video, *, from_mantissas: bool = False) -> QuantizedLogits:
    return quantized_trace(model, video, from_mantissas=from_mantissas).logits


def argmax_lowest(values: Sequence) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def predict(model: ModelSpec, video, *, from_mantissas: bool = False) -> int:
    return argmax_lowest(quantized_forward(model, video, from_mantissas=from_mantissas).mantissas)


def dequantize_grid(mantissas, fmt: FixedPointFormat) -> np.ndarray:
    m = np.asarray(mantissas, dtype=object)
    return np.vectorize(lambda v: dequantize(QuantizedValue(fmt, int(v))), otypes=[float])(m)
