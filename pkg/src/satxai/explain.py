"""Why / why-not explanations on top of an encoded model, with certificates.

``explain_why`` runs a deletion loop over input features. ``explain_whynot``
searches for a minimum-cost set of input flips reaching a target class via
linear descent on a cardinality bound. Every verdict the answer depends on is
recorded so a report can be audited without re-running the solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoder import (
    EncodedModel,
    SequentialCounter,
    _input_grid,
    constrain_output_is,
    constrain_output_not,
    flip_variables,
    input_assumptions,
)
from .model import predict
from .solver import SolveResult, make_backend

REPORT_SCHEMA = "satxai.explanation/1"
MODES = ("entailment", "paper-literal")
GRANULARITIES = ("bits", "features")


class ExplainError(RuntimeError):
    pass


class InvalidQuery(ValueError):
    pass


@dataclass
class AbductiveExplanation:
    features: list  # E, sorted (t, d) pairs
    predicted_class: int
    mode: str
    order: list  # the deletion order actually used
    input: list  # mantissa grid
    certificate: list = field(default_factory=list)  # one step per tried feature
    final_verdict: str | None = None  # verdict of the closing check on E
    stats: dict = field(default_factory=dict)
    kind: str = "why"

    def __post_init__(self):
        self.features = sorted(tuple(f) for f in self.features)
        self.order = [tuple(f) for f in self.order]


@dataclass
class ContrastiveExplanation:
    status: str  # "found" | "unreachable-class"
    granularity: str
    original_class: int
    target_class: int
    input: list
    modified_input: list | None = None
    flips: list = field(default_factory=list)  # (t, d, bit) or (t, d)
    cost: int | None = None
    bounds: list = field(default_factory=list)  # descent steps: bound, verdict, cost
    stats: dict = field(default_factory=dict)
    kind: str = "whynot"

    def __post_init__(self):
        self.flips = sorted(tuple(f) for f in self.flips)

    @property
    def found(self) -> bool:
        return self.status == "found"


def _backend(enc: EncodedModel, backend):
    if backend is None or isinstance(backend, str):
        return make_backend(backend or "internal", enc.formula)
    return backend


def _solve(backend, assumptions) -> SolveResult:
    res = backend.solve(assumptions)
    if not (res.is_sat or res.is_unsat):
        raise ExplainError(f"solver gave no verdict ({res.status.value})")
    return res


def _verdict(res: SolveResult) -> str:
    return "SAT" if res.is_sat else "UNSAT"


def _stats(backend) -> dict:
    s = getattr(backend, "stats", {})
    return {k: int(v) for k, v in sorted(s.items())}


def _prediction(enc: EncodedModel, grid) -> int:
    return predict(enc.model, grid.tolist(), from_mantissas=True)


def deletion_order(enc: EncodedModel, order_seed: int | None = None) -> list:
    keys = enc.feature_keys()
    if order_seed is None:
        return keys
    perm = np.random.default_rng(order_seed).permutation(len(keys))
    return [keys[i] for i in perm]


def explain_why(enc: EncodedModel, video, mode: str = "entailment", order_seed: int | None = None, *,
                backend=None, from_mantissas: bool = False) -> AbductiveExplanation:
    """Subset-minimal set of features whose values fix the prediction.

    In ``entailment`` mode a feature stays freed iff the remaining fixed
    features still make "output is not c" unsatisfiable. ``paper-literal``
    mode instead frees a feature iff "output is c" remains satisfiable; the
    original input always satisfies that, so this mode frees everything.
    """
    if mode not in MODES:
        raise InvalidQuery(f"mode must be one of {MODES}")
    grid = _input_grid(enc, video, from_mantissas)
    c = _prediction(enc, grid)
    be = _backend(enc, backend)
    guard = constrain_output_not(enc, c) if mode == "entailment" else constrain_output_is(enc, c)
    order = deletion_order(enc, order_seed)
    kept = set(order)
    steps = []
    for f in order:
        trial = kept - {f}
        res = _solve(be, input_assumptions(enc, grid, trial, from_mantissas=True) + [guard])
        freed = res.is_unsat if mode == "entailment" else res.is_sat
        if freed:
            kept = trial
        steps.append({"feature": list(f), "verdict": _verdict(res), "freed": freed})
    final = _solve(be, input_assumptions(enc, grid, kept, from_mantissas=True) + [guard])
    return AbductiveExplanation(sorted(kept), c, mode, order, grid.tolist(), steps, _verdict(final), _stats(be))


def check_axp(enc: EncodedModel, video, features, c: int, *, backend=None, from_mantissas: bool = False) -> bool:
    """True iff fixing ``features`` to their values in ``video`` forces class ``c``."""
    grid = _input_grid(enc, video, from_mantissas)
    be = _backend(enc, backend)
    guard = constrain_output_not(enc, c)
    res = _solve(be, input_assumptions(enc, grid, [tuple(f) for f in features], from_mantissas=True) + [guard])
    return res.is_unsat


def explain_whynot(enc: EncodedModel, video, target: int, granularity: str = "bits", *,
                   backend=None, from_mantissas: bool = False) -> ContrastiveExplanation:
    """Minimum number of flipped bits (or changed features) that makes ``target`` the prediction.

    Starts from any input reaching ``target`` and tightens an at-most-(k-1)
    bound on the flip count until the solver reports Unsat.
    """
    if granularity not in GRANULARITIES:
        raise InvalidQuery(f"granularity must be one of {GRANULARITIES}")
    if not 0 <= target < enc.num_classes:
        raise InvalidQuery(f"target class {target} out of range [0, {enc.num_classes})")
    grid = _input_grid(enc, video, from_mantissas)
    c1 = _prediction(enc, grid)
    if target == c1:
        raise InvalidQuery(f"target class {target} is already the prediction")
    be = _backend(enc, backend)
    flips = flip_variables(enc, grid.tolist(), granularity, from_mantissas=True)
    g_is = constrain_output_is(enc, target)
    res = _solve(be, [g_is])
    if res.is_unsat:
        return ContrastiveExplanation("unreachable-class", granularity, c1, target, grid.tolist(),
                                      bounds=[{"bound": None, "verdict": "UNSAT", "cost": None}], stats=_stats(be))
    best = res
    k = len(flips.flipped(res.model))
    bounds = [{"bound": None, "verdict": "SAT", "cost": k}]
    counter = SequentialCounter(enc, flips.lits, max(k - 1, 0))
    while k > 0:
        res = _solve(be, [g_is, counter.at_most(k - 1)])
        if res.is_unsat:
            bounds.append({"bound": k - 1, "verdict": "UNSAT", "cost": None})
            break
        best = res
        k = len(flips.flipped(res.model))
        bounds.append({"bound": bounds[-1]["cost"] - 1, "verdict": "SAT", "cost": k})
    modified = enc.decode_input(best.model)
    if predict(enc.model, modified, from_mantissas=True) != target:
        raise ExplainError("counterfactual input does not re-classify to the target class")
    return ContrastiveExplanation("found", granularity, c1, target, grid.tolist(), modified,
                                  flips.flipped(best.model), k, bounds, _stats(be))


# ---------------------------------------------------------------------------
# reports


def _value(m: int, frac: int) -> float:
    return float(m) / (1 << frac)


def render_report(expl, varmap) -> dict:
    """JSON-ready report: query echo, per-feature verdicts, certificate, solver statistics."""
    frac = varmap.meta["act_format"]["frac"]
    if expl.kind == "why":
        fixed = set(expl.features)
        features = []
        for t, row in enumerate(expl.input):
            for d, m in enumerate(row):
                features.append({"feature": [t, d], "mantissa": m, "value": _value(m, frac),
                                 "verdict": "kept" if (t, d) in fixed else "freed"})
        return {
            "schema": REPORT_SCHEMA,
            "kind": "why",
            "query": {"input": expl.input, "predicted_class": expl.predicted_class, "mode": expl.mode,
                      "order": [list(f) for f in expl.order]},
            "status": "found",
            "explanation": [list(f) for f in expl.features],
            "features": features,
            "certificate": {"steps": expl.certificate, "final_verdict": expl.final_verdict},
            "solver": expl.stats,
        }
    changed = []
    if expl.modified_input is not None:
        for t, (row, new_row) in enumerate(zip(expl.input, expl.modified_input)):
            for d, (m, m2) in enumerate(zip(row, new_row)):
                if m != m2:
                    changed.append({"feature": [t, d], "verdict": "flipped", "old_mantissa": m, "new_mantissa": m2,
                                    "old": _value(m, frac), "new": _value(m2, frac)})
    last_unsat = next((b["bound"] for b in reversed(expl.bounds) if b["verdict"] == "UNSAT"), None)
    return {
        "schema": REPORT_SCHEMA,
        "kind": "whynot",
        "query": {"input": expl.input, "predicted_class": expl.original_class, "target_class": expl.target_class,
                  "granularity": expl.granularity},
        "status": expl.status,
        "cost": expl.cost,
        "flips": [list(f) for f in expl.flips],
        "modified_input": expl.modified_input,
        "features": changed,
        "certificate": {"descent": expl.bounds, "unsat_bound": last_unsat},
        "solver": expl.stats,
    }


def dumps_report(expl, varmap) -> str:
    return json.dumps(render_report(expl, varmap), indent=1, sort_keys=True) + "\n"


def parse_report(text):
    """Rebuild the explanation object from a report (text or dict)."""
    d = json.loads(text) if isinstance(text, str) else text
    if d.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"not an explanation report (schema {d.get('schema')!r})")
    q = d["query"]
    if d["kind"] == "why":
        cert = d["certificate"]
        return AbductiveExplanation(
            [tuple(f) for f in d["explanation"]], q["predicted_class"], q["mode"],
            [tuple(f) for f in q["order"]], q["input"], cert["steps"], cert["final_verdict"], d["solver"])
    if d["kind"] == "whynot":
        return ContrastiveExplanation(
            d["status"], q["granularity"], q["predicted_class"], q["target_class"], q["input"],
            d["modified_input"], [tuple(f) for f in d["flips"]], d["cost"], d["certificate"]["descent"],
            d["solver"])
    raise ValueError(f"unknown report kind {d['kind']!r}")


def summarize(expl) -> str:
    """One-paragraph human-readable summary for terminal output."""
    if expl.kind == "why":
        feats = ", ".join(f"(t={t}, d={d})" for t, d in expl.features) or "none"
        return (f"class {expl.predicted_class} ({expl.mode}): {len(expl.features)} necessary feature(s): {feats}; "
                f"closing check {expl.final_verdict}")
    if not expl.found:
        return f"class {expl.target_class} is unreachable for any input"
    unit = "bit" if expl.granularity == "bits" else "feature"
    return (f"{expl.original_class} -> {expl.target_class}: minimum cost {expl.cost} {unit} change(s); "
            f"no cheaper change exists")
