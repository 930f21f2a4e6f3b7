"""SAT-based why / why-not explanations for quantized video classifiers."""

from .encoder import EncodedModel, encode_model
from .explain import (
    AbductiveExplanation,
    ContrastiveExplanation,
    check_axp,
    dumps_report,
    explain_whynot,
    explain_why,
    parse_report,
)
from .fixedpoint import FixedPointFormat, QuantizedValue, quantize
from .model import ModelSpec, load_model, predict, quantized_forward, save_model
from .solver import CdclSolver, make_backend, solve_cnf

__all__ = [
    "AbductiveExplanation",
    "CdclSolver",
    "ContrastiveExplanation",
    "EncodedModel",
    "FixedPointFormat",
    "ModelSpec",
    "QuantizedValue",
    "check_axp",
    "dumps_report",
    "encode_model",
    "explain_whynot",
    "explain_why",
    "load_model",
    "make_backend",
    "parse_report",
    "predict",
    "quantize",
    "quantized_forward",
    "save_model",
    "solve_cnf",
]
