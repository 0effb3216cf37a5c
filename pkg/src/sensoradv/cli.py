"""Command-line entry point: ``sensoradv <subcommand> ...``.

Exit status is 0 on success, 2 on usage or configuration errors and 1 on
runtime failures. ``SENSORADV_LOG`` sets the log level (default INFO).
"""

import argparse
import json
import logging
import os
import sys
import traceback

import numpy as np

from . import pipeline, plotting
from .attacks.base import STRATEGIES, AttackConfig
from .attacks.suite import load_results, run_attack_suite, save_adversarial, write_results_jsonl
from .config import load_config
from .dataset import generate_synthetic, load_recordings, load_tensor, save_recordings, save_tensor, split
from .errors import ConfigError
from .evaluation import (attach_ensemble, emit_report, ensemble_from_accuracy, ensemble_row,
                         read_report_json, transfer_matrix)
from .models import MODEL_NAMES, Checkpoint, build, load, save
from .signal_image import ChannelStats, EncoderConfig, encode_dataset, write_pgm
from .training import TrainConfig, fit, write_history_csv

log = logging.getLogger("sensoradv")


class UsageError(Exception):
    """Bad combination of arguments, reported with exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _digest(obj):
    return pipeline._digest(obj)


def _positive(value):
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


# ------------------------------------------------------------ subcommands


def cmd_synth(args):
    ds = generate_synthetic(args.users, args.gestures, args.samples, args.seed)
    os.makedirs(os.path.dirname(os.path.abspath(args.output)), exist_ok=True)
    save_recordings(ds, args.output, args.format)
    log.info("wrote %d recordings to %s", len(ds.recordings), args.output)
    print(args.output)


def _load_encoded(path):
    with open(path, encoding="utf-8") as fh:
        meta = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    return {
        "meta": meta,
        "train_images": load_tensor(os.path.join(base, meta["train_images"])),
        "train_labels": np.array(meta["train_labels"], dtype=np.int64),
        "test_images": load_tensor(os.path.join(base, meta["test_images"])),
        "test_labels": np.array(meta["test_labels"], dtype=np.int64),
    }


def cmd_encode(args):
    ds = load_recordings(args.data, args.format)
    sp = split(ds, args.train_fraction, args.seed)
    enc = EncoderConfig(columns=args.columns)
    norm = ChannelStats.from_recordings(ds.recordings[i] for i in sp.train)
    xtr, ytr = encode_dataset(ds, sp.train, enc, norm)
    xte, yte = encode_dataset(ds, sp.test, enc, norm)
    h = _digest({"data": pipeline.file_sha256(args.data), "columns": args.columns,
                 "train_fraction": args.train_fraction, "seed": args.seed})
    os.makedirs(args.out, exist_ok=True)
    save_tensor(xtr, os.path.join(args.out, f"train-{h}.sadv"))
    save_tensor(xte, os.path.join(args.out, f"test-{h}.sadv"))
    meta = {
        "encoder": {"columns": enc.columns, "alphabet_size": enc.alphabet_size, "order": enc.order},
        "norm": norm.to_dict(),
        "seed": args.seed,
        "class_count": ds.user_count,
        "train_images": f"train-{h}.sadv",
        "test_images": f"test-{h}.sadv",
        "train_indices": list(sp.train),
        "test_indices": list(sp.test),
        "train_labels": ytr.tolist(),
        "test_labels": yte.tolist(),
    }
    path = os.path.join(args.out, f"encoded-{h}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    if args.previews:
        prev = os.path.join(args.out, "previews")
        os.makedirs(prev, exist_ok=True)
        for user in range(ds.user_count):
            i = int(np.flatnonzero(yte == user)[0])
            write_pgm(os.path.join(prev, f"user{user:03d}-{h}.pgm"), xte[i])
    print(path)


def cmd_train(args):
    enc = _load_encoded(args.encoded)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)
    shape = enc["train_images"].shape[1:]
    k = int(enc["meta"]["class_count"])
    h = _digest({"encoded": pipeline.file_sha256(args.encoded), "model": args.model,
                 "train": vars(cfg)})
    os.makedirs(args.out, exist_ok=True)
    model = build(args.model, k, args.seed, input_shape=shape)
    history = fit(model, enc["train_images"], enc["train_labels"], cfg)
    path = os.path.join(args.out, f"{args.model}-{h}.ckpt")
    save(Checkpoint(model, {"train_config": vars(cfg), "encoded": os.path.basename(args.encoded)},
                    enc["meta"]["norm"]), path)
    write_history_csv(history, os.path.join(args.out, f"{args.model}-{h}-history.csv"))
    plotting.training_curves({args.model: history}, os.path.join(args.out, f"{args.model}-{h}-training.png"))
    print(path)


def cmd_attack(args):
    enc = _load_encoded(args.encoded)
    ckpt = load(args.checkpoint)
    name = ckpt.spec.name
    positions = pipeline.attack_positions(enc["test_labels"], args.samples_per_user)
    configs = [AttackConfig(s, seed=args.seed) for s in args.strategies]
    results = run_attack_suite(ckpt.model, enc["test_images"][positions], enc["test_labels"][positions],
                               configs, indices=positions, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    base = {"checkpoint": pipeline.file_sha256(args.checkpoint), "positions": positions.tolist()}
    for acfg in configs:
        h = _digest({**base, "attack": acfg.to_dict()})
        stem = os.path.join(args.out, f"{acfg.strategy}-{name}-{h}")
        write_results_jsonl(results[acfg.strategy], stem + ".jsonl", source=name)
        save_adversarial(results[acfg.strategy], stem + ".sadv")
        rate = np.mean([r.converged for r in results[acfg.strategy]])
        log.info("%s on %s: converged %.3f", acfg.strategy, name, rate)
        print(stem + ".jsonl")


def cmd_transfer(args):
    enc = _load_encoded(args.encoded)
    models = {}
    for path in args.checkpoints:
        ckpt = load(path)
        models[ckpt.spec.name] = ckpt.model
    outputs, positions = {}, None
    for path in args.attacks:
        tensor = path[:-len(".jsonl")] + ".sadv" if path.endswith(".jsonl") else None
        if tensor is None or not os.path.exists(tensor):
            raise UsageError(f"{path}: expected a .jsonl file with a .sadv tensor beside it")
        results = load_results(path, tensor)
        with open(path, encoding="utf-8") as fh:
            source = json.loads(fh.readline()).get("source")
        if source not in models:
            raise UsageError(f"{path}: source model {source!r} not among the checkpoints")
        idx = [r.original_index for r in results]
        if positions is not None and idx != positions:
            raise UsageError(f"{path}: attacked samples differ from the other attack files")
        positions = idx
        outputs[(results[0].strategy, source)] = results
    if not outputs:
        raise UsageError("no attack results given")
    pos = np.array(positions)
    images, labels = enc["test_images"][pos], enc["test_labels"][pos]
    meta = {"checkpoints": {n: pipeline.file_sha256(p) for n, p in
                            zip([load(p).spec.name for p in args.checkpoints], args.checkpoints)},
            "attacked_samples": len(pos)}
    report = transfer_matrix(models, outputs, images, labels, indices=positions, metadata=meta)
    if len(models) > 1:
        spec = ensemble_from_accuracy([models[t] for t in report.targets], images, labels)
        report.metadata["ensemble_weights"] = {t: float(w) for t, w in zip(report.targets, spec.weights)}
        attach_ensemble(report, ensemble_row(spec, outputs, images, labels, indices=positions))
    h = _digest(meta)
    os.makedirs(args.out, exist_ok=True)
    path = emit_report(report, os.path.join(args.out, f"report-{h}.json"), "json")
    print(path)


def cmd_report(args):
    report = read_report_json(args.input)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    os.makedirs(args.out, exist_ok=True)
    ext = {"markdown": "md", "csv": "csv", "json": "json"}
    for fmt in args.formats:
        print(emit_report(report, os.path.join(args.out, f"{stem}.{ext[fmt]}"), fmt))
    if args.figures:
        for p in pipeline.write_figures(report, args.out, stem):
            print(p)


def cmd_replicate(args):
    cfg = load_config(args.config)
    report, written = pipeline.replicate(cfg, out_dir=args.out, jobs=args.jobs,
                                         resume=not args.fresh, figures=not args.no_figures)
    for key in ("markdown", "csv", "json"):
        print(written[key])
    for p in written.get("figures", []):
        print(p)


# ----------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="sensoradv", description="Adversarial attacks on motion-sensor user identification CNNs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic gesture dataset")
    s.add_argument("--users", type=_positive, default=10)
    s.add_argument("--gestures", type=_positive, default=60)
    s.add_argument("--samples", type=_positive, default=150, help="samples per channel")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--format", choices=("csv", "binary"), help="default: from the file extension")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("encode", help="split recordings and encode them as images")
    s.add_argument("--data", required=True)
    s.add_argument("--format", choices=("csv", "binary"))
    s.add_argument("--columns", type=_positive, default=128)
    s.add_argument("--train-fraction", type=float, default=0.8)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--previews", action="store_true", help="also write one PGM per user")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train", help="train one model on encoded images")
    s.add_argument("--encoded", required=True)
    s.add_argument("--model", choices=MODEL_NAMES, required=True)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch-size", type=_positive, default=32)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("attack", help="attack a checkpoint on the encoded test set")
    s.add_argument("--encoded", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--strategies", nargs="+", choices=STRATEGIES, default=list(STRATEGIES))
    s.add_argument("--samples-per-user", type=_positive)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--jobs", type=_positive, default=1)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("transfer", help="evaluate attack results across models")
    s.add_argument("--encoded", required=True)
    s.add_argument("--checkpoints", nargs="+", required=True)
    s.add_argument("--attacks", nargs="+", required=True, help="attack .jsonl files")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("report", help="render a JSON report as tables and figures")
    s.add_argument("--input", required=True)
    s.add_argument("--formats", nargs="+", choices=("markdown", "csv", "json"), default=["markdown", "csv"])
    s.add_argument("--no-figures", dest="figures", action="store_false")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("replicate", help="run the full pipeline from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (overrides the config)")
    s.add_argument("--jobs", type=_positive, default=1)
    s.add_argument("--fresh", action="store_true", help="ignore cached checkpoints and attack results")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_replicate)
    return p


def _failing_module(exc):
    """Name of the innermost package module in the traceback."""
    pkg = os.path.dirname(os.path.abspath(__file__))
    name = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        path = os.path.abspath(frame.filename)
        if path.startswith(pkg + os.sep):
            name = os.path.splitext(os.path.relpath(path, pkg))[0].replace(os.sep, ".")
    return name


def _setup_logging():
    level = os.environ.get("SENSORADV_LOG", "INFO").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "INFO"
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def dispatch(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"sensoradv: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"sensoradv: config error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        log.debug("traceback", exc_info=True)
        print(f"sensoradv: error in {_failing_module(exc)}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
