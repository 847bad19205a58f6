"""``foasscv`` command line: synth -> labels -> extract -> train -> eval.

Every flag may also be given in a JSON document passed with ``--config``;
flags on the command line win. Exit status: 0 ok, 2 usage, 3 data error,
4 numeric failure. Errors go to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import pipeline
from .metrics import CSV_FIELDS, REPORT_SCHEMA_VERSION, write_rows_csv
from .synthroom import build_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# built-in values for flags left unset by both the command line and --config
DEFAULTS = {
    "rooms": 200, "seed": 0, "dry": "synthetic", "target": "t60",
    "epochs": 100, "batch_size": 16, "lr": 5e-4, "split": "test",
    "deterministic": False, "fixed_alpha": False,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of default flag values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (or file for report)")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="single-threaded numerics for bit-exact reruns")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="foasscv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="synthesize a FOA dataset")
    p.add_argument("--rooms", type=int)
    p.add_argument("--dry", help='"synthetic" or a directory of mono 16 kHz WAVs')

    p = sub.add_parser("labels", parents=[common], help="recompute label JSONs from RIRs")
    p.add_argument("--data")

    p = sub.add_parser("extract", parents=[common], help="write SSCV feature containers")
    p.add_argument("--data")

    p = sub.add_parser("train", parents=[common], help="train FOA-Conv3D for one target")
    p.add_argument("--data")
    p.add_argument("--target", choices=("t60", "drr", "c50"))
    p.add_argument("--checkpoint", help="checkpoint path (default <out>/<target>)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--fixed-alpha", action="store_true", default=None, dest="fixed_alpha",
                   help="keep smoothing factors at their initial value")

    p = sub.add_parser("eval", parents=[common], help="score checkpoints on a split")
    p.add_argument("--data")
    p.add_argument("--checkpoint", nargs="+")
    p.add_argument("--split", choices=("train", "val", "test"))

    p = sub.add_parser("predict", parents=[common], help="estimate labels for one WAV")
    p.add_argument("--checkpoint")
    p.add_argument("wav")

    p = sub.add_parser("report", parents=[common], help="merge evaluation CSVs")
    p.add_argument("csv", nargs="+")
    return parser


def resolve(args) -> dict:
    """Merge built-in defaults, the --config document and explicit flags."""
    opts = dict(DEFAULTS)
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(doc) - set(DEFAULTS) - set(vars(args))
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        opts.update(doc)
    opts.update({k: v for k, v in vars(args).items() if v is not None})
    return opts


def _require(opts, *keys):
    missing = [k for k in keys if opts.get(k) is None]
    if missing:
        raise UsageError(f"{opts['command']}: missing required option(s): "
                         + ", ".join("--" + k.replace("_", "-") for k in missing))


def _emit(doc):
    print(json.dumps(doc, sort_keys=True))


def cmd_synth(o):
    _require(o, "out")
    t0 = time.perf_counter()
    manifest = build_dataset(o["rooms"], o["out"], o["dry"], o["seed"])
    _emit({"command": "synth", "out": str(o["out"]), "utterances": len(manifest.records),
           "dataset_hash": pipeline.dataset_hash(o["out"]),
           "seconds": round(time.perf_counter() - t0, 2)})


def cmd_labels(o):
    _require(o, "data")
    _emit({"command": "labels", "relabelled": pipeline.relabel_dataset(o["data"])})


def cmd_extract(o):
    _require(o, "data")
    index = pipeline.extract_dataset(o["data"])
    _emit({"command": "extract", **index})


def cmd_train(o):
    _require(o, "data")
    out = Path(o.get("out") or Path(o["data"]) / "models")
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = Path(o.get("checkpoint") or out / o["target"])
    extractor = pipeline.make_extractor()
    est, report = pipeline.train_model(
        o["data"], o["target"], extractor, max_epochs=o["epochs"],
        batch_size=o["batch_size"], lr=o["lr"], learn_alpha=not o["fixed_alpha"],
        random_state=o["seed"], verbose=int(o.get("verbose") or 0))
    est.save(checkpoint, pipeline.feature_config_record(extractor))
    report_path = out / f"{o['target']}_train_report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    _emit({"command": "train", "checkpoint": str(checkpoint), "report": str(report_path),
           "stop_epoch": report["stop_epoch"], "best_epoch": report["best_epoch"],
           "best_val_loss": report["best_val_loss"]})


def cmd_eval(o):
    _require(o, "data", "checkpoint")
    extractor = pipeline.make_extractor()
    estimators = {}
    for path in o["checkpoint"]:
        est = pipeline.load_estimator(path, extractor)
        if est.target in estimators:
            raise UsageError(f"two checkpoints for target {est.target}")
        estimators[est.target] = est
    report, baseline = pipeline.evaluate_models(o["data"], estimators, o["split"],
                                                extractor=extractor)
    out = Path(o.get("out") or Path(o["data"]) / "eval")
    out.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "split": o["split"],
           "model": report.to_dict(), "baseline": baseline.to_dict()}
    (out / "eval_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    write_rows_csv(out / "eval_report.csv", [*report.rows(), *baseline.rows()])
    _emit({"command": "eval", "out": str(out),
           "mean": {p: v["mean"] for p, v in doc["model"]["parameters"].items()},
           "baseline_mean": {p: v["mean"] for p, v in doc["baseline"]["parameters"].items()}})


def cmd_predict(o):
    _require(o, "checkpoint")
    checkpoint = o["checkpoint"]
    if isinstance(checkpoint, list):
        checkpoint = checkpoint[0]
    _emit(pipeline.predict_wav(checkpoint, o["wav"]).to_dict())


def cmd_report(o):
    _require(o, "out")
    rows = []
    for path in o["csv"]:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_FIELDS:
                raise ValueError(f"{path}: not an evaluation CSV (header {reader.fieldnames})")
            for row in reader:
                if int(row["schema_version"]) != REPORT_SCHEMA_VERSION:
                    raise ValueError(f"{path}: unsupported schema version {row['schema_version']}")
                rows.append(row)
    write_rows_csv(o["out"], rows)
    _emit({"command": "report", "out": str(o["out"]), "rows": len(rows)})


COMMANDS = {"synth": cmd_synth, "labels": cmd_labels, "extract": cmd_extract,
            "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "report": cmd_report}


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        opts = resolve(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = threadpool_limits(1) if opts["deterministic"] else contextlib.nullcontext()
    try:
        with limits:
            COMMANDS[opts["command"]](opts)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except ArithmeticError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_DATA, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
