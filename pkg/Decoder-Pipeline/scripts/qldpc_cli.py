"""
qldpc_cli.py
------------
Command-line front end for the decoding pipeline.

    python qldpc_cli.py code build  --config codes/bb_72.json [--out code.json]
    python qldpc_cli.py sample      --code codes/surface_d3.json --p-max 0.15 --count 10000 --seed 0 --out data.qlds
    python qldpc_cli.py train       --config training/surface_d3.json [--out-dir DIR]
    python qldpc_cli.py decode      --code codes/surface_d3.json --decoder bp_osd --p 0.05 [--syndrome-file F]
    python qldpc_cli.py bench       --config bench/surface_bp.json [--out-dir DIR]
    python qldpc_cli.py threshold   --table data/runs/bench/.../ler.csv

Every command prints one JSON document carrying the config hash and seed.
Exit codes: 0 success, 1 usage error, 2 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from bench import DECODERS, correct, make_pipeline, run_bench, threshold_from_table
from code_model import code_definition, code_id, load_code
from gf2 import InconsistentSystemError
from gnn_decoder import load_checkpoint
from noise_channel import compute_syndrome, generate_dataset, generate_test_set, save_dataset
from settings import SETTINGS, config_hash, configure_logging, load_json_config
from trainer import NonFiniteLossError, TrainingDivergedError, run_training
from validate_dataset import validate_dataset

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
PAULI_LETTERS = "IXZY"


class UsageError(Exception):
    """Bad command line or input file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, default=str))


# ─────────────────────────────────────────
# Subcommands
# ─────────────────────────────────────────

def cmd_code_build(args) -> int:
    definition = load_json_config(args.config)
    code = load_code(definition)
    payload = {
        "code_id": code_id(code), "n": code.n, "k": code.k, "d": code.d,
        "m_x": code.m_x, "m_z": code.m_z, "config_hash": config_hash(definition), "seed": None,
    }
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        document = {**code_definition(code), **payload,
                    "h_x": code.h_x.to_dense().tolist(), "h_z": code.h_z.to_dense().tolist(),
                    "logicals_x": code.logicals_x.to_dense().tolist(),
                    "logicals_z": code.logicals_z.to_dense().tolist()}
        out.write_text(json.dumps(document))
        payload["written"] = str(out)
    _emit(payload)
    return EXIT_OK


def cmd_sample(args) -> int:
    definition = load_json_config(args.code)
    code = load_code(definition)
    if args.fixed_p:
        dataset = generate_test_set(code, args.p_max, args.count, args.seed, workers=args.workers)
    else:
        dataset = generate_dataset(code, args.p_max, args.count, args.seed, workers=args.workers)
    stats = validate_dataset(code, dataset, args.report)
    path = save_dataset(dataset, args.out)
    _emit({
        "code_id": dataset.code_id, "count": len(dataset), "p_max": args.p_max,
        "fixed_p": args.fixed_p, "written": str(path), "mean_weight": stats["samples"]["mean_weight"],
        "config_hash": config_hash({"code": definition, "p_max": args.p_max, "count": args.count,
                                    "fixed_p": args.fixed_p}),
        "seed": args.seed,
    })
    return EXIT_OK


def cmd_train(args) -> int:
    experiment = load_json_config(args.config)
    result = run_training(experiment, args.out_dir)
    last = result.log.iloc[-1].to_dict() if len(result.log) else {}
    _emit({
        "epochs": len(result.log), "epochs_to_criterion": result.epochs_to_criterion,
        "stopped_early": result.stopped_early, "last_epoch": last,
        "config_hash": config_hash(experiment), "seed": experiment.get("train", {}).get("seed", 0),
    })
    return EXIT_OK


def _read_syndrome(args) -> np.ndarray:
    text = Path(args.syndrome_file).read_text() if args.syndrome_file else sys.stdin.read()
    bits = [c for c in text if not c.isspace() and c != ","]
    if not bits or any(c not in "01" for c in bits):
        raise UsageError("Syndrome must be a string of 0/1 characters.")
    return np.array([int(c) for c in bits], dtype=np.uint8)


def cmd_decode(args) -> int:
    definition = load_json_config(args.code)
    code = load_code(definition)
    syndrome = _read_syndrome(args)
    if syndrome.shape[0] != code.num_checks:
        raise UsageError(f"Syndrome has {syndrome.shape[0]} bits, {code_id(code)} has {code.num_checks} checks.")
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    pipeline = make_pipeline(args.decoder, code, args.p, model=model, gnn_iterations=args.iterations)
    correction, first, osd_invoked = correct(pipeline, code, syndrome)
    _emit({
        "code_id": code_id(code), "decoder": args.decoder,
        "error": "".join(PAULI_LETTERS[v] for v in correction),
        "syndrome_satisfied": bool(np.array_equal(compute_syndrome(code, correction), syndrome)),
        "converged_first_stage": first.converged, "osd_invoked": osd_invoked,
        "iterations_used": first.iterations_used,
        "config_hash": config_hash({"code": definition, "decoder": args.decoder, "p": args.p,
                                    "checkpoint": args.checkpoint, "iterations": args.iterations}),
        "seed": None,
    })
    return EXIT_OK


def cmd_bench(args) -> int:
    config = load_json_config(args.config)
    table = run_bench(config, args.out_dir)
    if not np.isfinite(table["ler"]).all():
        logger.error("Bench produced non-finite LER values.")
        return EXIT_NUMERIC
    _emit({"points": len(table), "decoders": sorted(table["decoder"].unique()),
           "config_hash": config_hash(config), "seed": config["seed"]})
    return EXIT_OK


def cmd_threshold(args) -> int:
    table = pd.read_csv(args.table)
    if args.decoder:
        table = table[table["decoder"] == args.decoder]
    estimates = threshold_from_table(table)
    if not estimates:
        raise UsageError("Threshold estimation needs at least two distances for one decoder.")
    _emit({
        "thresholds": {
            decoder: {"found": e.found, "low": e.low, "high": e.high, "spread": e.spread,
                      "crossings": [list(c) for c in e.crossings]}
            for decoder, e in estimates.items()
        },
        "config_hash": ",".join(sorted(table["config_hash"].astype(str).unique())),
        "seed": sorted(int(s) for s in table["seed"].unique()),
    })
    return EXIT_OK


# ─────────────────────────────────────────
# Parser
# ─────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qldpc", description="QLDPC decoding toolkit")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    code = sub.add_parser("code", help="code utilities")
    code_sub = code.add_subparsers(dest="code_command", required=True, parser_class=_Parser)
    build = code_sub.add_parser("build", help="construct and verify a code")
    build.add_argument("--config", required=True)
    build.add_argument("--out")
    build.set_defaults(func=cmd_code_build)

    sample = sub.add_parser("sample", help="generate and validate a dataset")
    sample.add_argument("--code", required=True)
    sample.add_argument("--p-max", type=float, required=True)
    sample.add_argument("--count", type=int, required=True)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--fixed-p", action="store_true")
    sample.add_argument("--workers", type=int, default=SETTINGS["workers"])
    sample.add_argument("--out", required=True)
    sample.add_argument("--report")
    sample.set_defaults(func=cmd_sample)

    train = sub.add_parser("train", help="train (or warm start) a model")
    train.add_argument("--config", required=True)
    train.add_argument("--out-dir")
    train.set_defaults(func=cmd_train)

    decode = sub.add_parser("decode", help="decode one syndrome from a file or stdin")
    decode.add_argument("--code", required=True)
    decode.add_argument("--decoder", choices=DECODERS, default="bp_osd")
    decode.add_argument("--p", type=float, default=0.05)
    decode.add_argument("--checkpoint")
    decode.add_argument("--iterations", type=int, default=30)
    decode.add_argument("--syndrome-file")
    decode.set_defaults(func=cmd_decode)

    bench = sub.add_parser("bench", help="Monte-Carlo LER benchmark")
    bench.add_argument("--config", required=True)
    bench.add_argument("--out-dir")
    bench.set_defaults(func=cmd_bench)

    threshold = sub.add_parser("threshold", help="threshold crossings from a LER table")
    threshold.add_argument("--table", required=True)
    threshold.add_argument("--decoder")
    threshold.set_defaults(func=cmd_threshold)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except (TrainingDivergedError, NonFiniteLossError, InconsistentSystemError, FloatingPointError) as e:
        logger.error("Numeric failure: %s", e)
        return EXIT_NUMERIC
    except (UsageError, ValueError, FileNotFoundError, KeyError) as e:
        logger.error("Usage error: %s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
