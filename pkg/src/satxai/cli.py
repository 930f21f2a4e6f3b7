"""Command-line front end: ``satxai <command> ...``.

Machine-readable outputs go to the file named by ``--out``; a short summary
goes to stdout. Exit status is 0 on success, 1 on domain errors and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import explain as ex
from . import oracle
from .cnf import CnfError, dumps_dimacs, read_dimacs
from .encoder import EncodingError, constrain_output_is, constrain_output_not, encode_model
from .fixedpoint import FixedPointError, FixedPointFormat
from .model import ModelError, dumps_model, load_model
from .solver import SolverError, make_backend
from .videoharness import (
    Dataset,
    HarnessError,
    TrainingError,
    extract_features,
    float_accuracy,
    gen_videos,
    quantized_accuracy,
    train_model,
)

log = logging.getLogger("satxai")

DOMAIN_ERRORS = (ModelError, FixedPointError, CnfError, EncodingError, SolverError, HarnessError,
                 TrainingError, ex.ExplainError, oracle.GuardExceeded, OSError, json.JSONDecodeError)


class UsageError(Exception):
    pass


def _write(path, text: str) -> None:
    Path(path).write_text(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def parse_format(text: str) -> FixedPointFormat:
    m = re.fullmatch(r"Q?(\d+)\.(\d+)", text.strip())
    if not m:
        raise argparse.ArgumentTypeError(f"format must look like 6.3 or Q6.3, got {text!r}")
    try:
        return FixedPointFormat.storage(int(m.group(1)), int(m.group(2)))
    except FixedPointError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _load_input(args, model):
    if args.input is not None:
        d = json.loads(Path(args.input).read_text())
        values = d["values"] if isinstance(d, dict) else d
    elif args.data is not None:
        ds = Dataset.load(args.data)
        if not 0 <= args.index < len(ds.videos):
            raise UsageError(f"--index {args.index} out of range for {len(ds.videos)} videos")
        values = extract_features(ds.videos[args.index]).tolist()
    else:
        raise UsageError("give --input FILE or --data FILE --index N")
    x = np.asarray(values, dtype=float)
    if x.shape != model.input_shape:
        raise ModelError(f"input shape {x.shape} does not match model input {model.input_shape}")
    return x


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    ds = gen_videos(args.seed, args.count, args.frames, args.height, args.width, args.jitter)
    ds.save(args.out)
    counts = np.bincount(ds.labels, minlength=4).tolist()
    print(f"wrote {len(ds.videos)} videos ({args.frames}x{args.height}x{args.width}) to {args.out}; "
          f"class counts {counts}")
    return 0


def cmd_train(args) -> int:
    ds = Dataset.load(args.data)
    X, y = ds.features(), ds.labels
    model, acc = train_model(X[ds.train_idx], y[ds.train_idx], args.hidden, args.epochs, args.lr, args.seed,
                             num_classes=4)
    _write(args.out, dumps_model(model))
    print(f"trained {args.hidden} hidden, {args.epochs} epochs: training accuracy {acc:.3f}; wrote {args.out}")
    return 0


def cmd_quantize(args) -> int:
    model = load_model(args.model).with_formats(args.weight_format, args.act_format)
    _write(args.out, dumps_model(model))
    msg = f"weights {args.weight_format}, activations {args.act_format}, {model.input_bits} input bits"
    if args.data:
        ds = Dataset.load(args.data)
        X, y = ds.features()[ds.test_idx], ds.labels[ds.test_idx]
        msg += f"; test accuracy float {float_accuracy(model, X, y):.3f} quantized {quantized_accuracy(model, X, y):.3f}"
    print(msg + f"; wrote {args.out}")
    return 0


def cmd_encode(args) -> int:
    model = load_model(args.model)
    enc = encode_model(model)
    for c in range(model.num_classes):
        constrain_output_is(enc, c)
        if model.num_classes > 1:
            constrain_output_not(enc, c)
    _write(args.out, dumps_dimacs(enc.formula))
    sidecar = args.varmap or f"{args.out}.varmap.json"
    enc.varmap.save(sidecar)
    print(f"{enc.formula.num_vars} variables, {enc.formula.num_clauses} clauses; wrote {args.out} and {sidecar}")
    return 0


def cmd_explain_why(args) -> int:
    model = load_model(args.model)
    x = _load_input(args, model)
    enc = encode_model(model)
    expl = ex.explain_why(enc, x, args.mode, args.order_seed, backend=make_backend(args.backend, enc.formula))
    _write(args.out, ex.dumps_report(expl, enc.varmap))
    print(ex.summarize(expl))
    return 0


def cmd_explain_whynot(args) -> int:
    model = load_model(args.model)
    x = _load_input(args, model)
    enc = encode_model(model)
    try:
        expl = ex.explain_whynot(enc, x, args.target_class, args.granularity,
                                 backend=make_backend(args.backend, enc.formula))
    except ex.InvalidQuery as e:
        raise UsageError(str(e)) from None
    _write(args.out, ex.dumps_report(expl, enc.varmap))
    print(ex.summarize(expl))
    return 0


def cmd_fidelity(args) -> int:
    model = load_model(args.model)
    enc = encode_model(model)
    if args.samples is None:
        rep = oracle.exhaustive_fidelity(model, enc, backend=args.backend, jobs=args.jobs)
    else:
        rep = oracle.sampled_fidelity(model, enc, args.samples, args.seed, backend=args.backend, jobs=args.jobs)
    _write(args.out, rep.dumps())
    kind = "exhaustive" if rep.exhaustive else "sampled"
    print(f"{kind}: {rep.checked} inputs, {len(rep.mismatches)} mismatches -> {'PASS' if rep.passed else 'FAIL'}")
    return 0 if rep.passed else 1


def cmd_solve(args) -> int:
    formula = read_dimacs(Path(args.cnf))
    assume = [int(t) for t in args.assume.split()] if args.assume else []
    res = make_backend(args.backend, formula).solve(assume)
    if res.is_sat:
        lits = [v if res.model[v] else -v for v in range(1, formula.num_vars + 1)]
        text = "s SATISFIABLE\n" + "".join(
            "v " + " ".join(map(str, lits[i:i + 20])) + "\n" for i in range(0, len(lits), 20)) + "v 0\n"
    elif res.is_unsat:
        text = "s UNSATISFIABLE\n"
    else:
        text = "s UNKNOWN\n"
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_backend(p):
    p.add_argument("--backend", default="internal", help="internal | external:<command> (default: internal)")


def _add_query_input(p):
    p.add_argument("--model", required=True, help="quantized model JSON")
    p.add_argument("--input", help="feature grid JSON (list of rows, or {\"values\": rows})")
    p.add_argument("--data", help="dataset JSON; use with --index")
    p.add_argument("--index", type=int, default=0, help="video index in --data (default: 0)")
    p.add_argument("--out", required=True, help="report path")
    _add_backend(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satxai", description="SAT-based explanations for quantized video classifiers")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic moving-dot dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--height", type=int, default=5)
    p.add_argument("--width", type=int, default=5)
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a float model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", type=int, nargs="*", default=[8])
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", help="attach fixed-point formats to a model")
    p.add_argument("--model", required=True)
    p.add_argument("--weight-format", type=parse_format, default=FixedPointFormat(6, 3))
    p.add_argument("--act-format", type=parse_format, default=FixedPointFormat(4, 2))
    p.add_argument("--data", help="dataset for a float vs quantized accuracy check")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("encode", help="write the model's CNF (DIMACS) plus a variable-map sidecar")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--varmap", help="sidecar path (default: <out>.varmap.json)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("explain", help="why / why-not explanations")
    esub = p.add_subparsers(dest="query", required=True)
    q = esub.add_parser("why", help="minimal set of features that fixes the prediction")
    _add_query_input(q)
    q.add_argument("--mode", choices=ex.MODES, default="entailment")
    q.add_argument("--order-seed", type=int, default=None, help="shuffle the deletion order with this seed")
    q.set_defaults(func=cmd_explain_why)
    q = esub.add_parser("whynot", help="minimum input change reaching another class")
    _add_query_input(q)
    q.add_argument("--target-class", type=int, required=True)
    q.add_argument("--granularity", choices=ex.GRANULARITIES, default="bits")
    q.set_defaults(func=cmd_explain_whynot)

    p = sub.add_parser("fidelity", help="check the CNF against the reference forward pass")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, help="check this many random inputs instead of all of them")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_backend(p)
    p.set_defaults(func=cmd_fidelity)

    p = sub.add_parser("solve", help="solve a DIMACS CNF file")
    p.add_argument("cnf")
    p.add_argument("--assume", help="space-separated assumption literals")
    p.add_argument("--out")
    _add_backend(p)
    p.set_defaults(func=cmd_solve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"satxai: error: {e}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as e:
        print(f"satxai: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        # bad backend spec and similar argument-level problems
        print(f"satxai: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
