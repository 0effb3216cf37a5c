"""End-to-end orchestration: data, training, attacks, transfer and reports.

Artifacts are cached under the output directory by content hash, so a rerun
with the same configuration reuses checkpoints and attack results.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import plotting
from .attacks.suite import load_results, run_attack_suite, save_adversarial, write_results_jsonl
from .dataset import generate_synthetic, load_recordings, split
from .evaluation import (attach_ensemble, emit_report, ensemble_from_accuracy, ensemble_row,
                         transfer_matrix)
from .errors import CheckpointError, DataFormatError
from .models import Checkpoint, build, load, save
from .signal_image import ChannelStats, encode_dataset
from .training import fit, read_history_csv, write_history_csv

log = logging.getLogger(__name__)


def _digest(obj, length=12):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:length]


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class PreparedData:
    dataset: object
    split: object
    norm: ChannelStats
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    @property
    def class_count(self):
        return self.dataset.user_count


def load_dataset(cfg):
    d = cfg.data
    if d.synthetic:
        return generate_synthetic(d.users, d.gestures, d.samples, cfg.seed)
    return load_recordings(d.path, d.format)


def prepare(cfg):
    """Load or synthesize recordings, split per user, and encode both sides
    with normalization statistics from the training side only."""
    dataset = load_dataset(cfg)
    sp = split(dataset, cfg.data.train_fraction, cfg.seed)
    norm = ChannelStats.from_recordings(dataset.recordings[i] for i in sp.train)
    xtr, ytr = encode_dataset(dataset, sp.train, cfg.encoder, norm)
    xte, yte = encode_dataset(dataset, sp.test, cfg.encoder, norm)
    return PreparedData(dataset, sp, norm, xtr, ytr, xte, yte)


def attack_positions(labels, per_user=None):
    """Positions in the test set to attack: the first ``per_user`` test
    samples of every user (all of them when ``per_user`` is None)."""
    labels = np.asarray(labels)
    if per_user is None:
        return np.arange(len(labels))
    keep = []
    for user in np.unique(labels):
        keep.extend(np.flatnonzero(labels == user)[:per_user].tolist())
    return np.array(sorted(keep), dtype=np.int64)


def training_key(cfg, name):
    """Hash of everything that determines a trained model."""
    c = cfg.to_dict()
    return _digest({"model": name, "seed": c["seed"], "data": c["data"], "encoder": c["encoder"],
                    "train": c["train"], "epochs": cfg.epochs_for(name)})


def train_models(cfg, data, out_dir, resume=True):
    """Train (or reload) every configured model.

    Returns ``(checkpoints, histories, paths)`` keyed by model name.
    """
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    checkpoints, histories, paths = {}, {}, {}
    for name in cfg.models:
        key = training_key(cfg, name)
        path = os.path.join(ckpt_dir, f"{name}-{key}.ckpt")
        hist_path = os.path.join(ckpt_dir, f"{name}-{key}-history.csv")
        ckpt = None
        if resume and os.path.exists(path) and os.path.exists(hist_path):
            try:
                ckpt = load(path, expected_spec=name)
                histories[name] = read_history_csv(hist_path)
                log.info("reusing checkpoint %s", path)
            except (CheckpointError, DataFormatError, OSError) as exc:
                log.warning("ignoring unusable checkpoint %s: %s", path, exc)
                ckpt = None
        if ckpt is None:
            tcfg = cfg.train_config_for(name)
            log.info("training %s for %d epochs", name, tcfg.epochs)
            model = build(name, data.class_count, cfg.seed, input_shape=cfg.encoder.shape)
            history = fit(model, data.train_images, data.train_labels, tcfg)
            metadata = {"train_config": asdict(tcfg), "encoder": asdict(cfg.encoder),
                        "split_seed": data.split.seed, "training_key": key}
            ckpt = Checkpoint(model, metadata, data.norm.to_dict())
            save(ckpt, path)
            write_history_csv(history, hist_path)
            histories[name] = history
        checkpoints[name] = ckpt
        paths[name] = path
    return checkpoints, histories, paths


def run_attacks(cfg, checkpoints, data, positions, out_dir, jobs=1, resume=True):
    """Attack every model with every configured strategy on ``positions``.

    Returns ``{(strategy, source): [AttackResult, ...]}``.
    """
    attack_dir = os.path.join(out_dir, "attacks")
    os.makedirs(attack_dir, exist_ok=True)
    images = data.test_images[positions]
    labels = data.test_labels[positions]
    outputs = {}
    for name in cfg.models:
        model = checkpoints[name].model
        pending = []
        for acfg in cfg.attacks:
            key = _digest({"model": training_key(cfg, name), "attack": acfg.to_dict(),
                           "positions": positions.tolist()})
            stem = os.path.join(attack_dir, f"{acfg.strategy}-{name}-{key}")
            if resume and os.path.exists(stem + ".jsonl") and os.path.exists(stem + ".sadv"):
                try:
                    outputs[(acfg.strategy, name)] = load_results(stem + ".jsonl", stem + ".sadv")
                    log.info("reusing attack results %s", stem)
                    continue
                except (DataFormatError, OSError, ValueError, KeyError) as exc:
                    log.warning("ignoring unusable attack results %s: %s", stem, exc)
            pending.append((acfg, stem))
        if not pending:
            continue
        results = run_attack_suite(model, images, labels, [a for a, _ in pending],
                                   indices=positions, jobs=jobs)
        for acfg, stem in pending:
            res = results[acfg.strategy]
            write_results_jsonl(res, stem + ".jsonl", source=name)
            save_adversarial(res, stem + ".sadv")
            outputs[(acfg.strategy, name)] = res
    return outputs


def evaluate(cfg, checkpoints, data, positions, outputs, metadata=None):
    """Transfer table plus the accuracy-weighted ensemble column."""
    models = {name: checkpoints[name].model for name in cfg.models}
    images = data.test_images[positions]
    labels = data.test_labels[positions]
    report = transfer_matrix(models, outputs, images, labels, indices=positions.tolist(),
                             metadata=metadata)
    if len(models) > 1:
        members = [models[n] for n in report.targets]
        spec = ensemble_from_accuracy(members, images, labels)
        report.metadata["ensemble_weights"] = {n: float(w) for n, w in zip(report.targets, spec.weights)}
        attach_ensemble(report, ensemble_row(spec, outputs, images, labels, indices=positions.tolist()))
    return report


def write_reports(report, out_dir, stem, formats=("markdown", "csv", "json")):
    ext = {"markdown": "md", "csv": "csv", "json": "json"}
    paths = {}
    for fmt in formats:
        paths[fmt] = emit_report(report, os.path.join(out_dir, f"{stem}.{ext[fmt]}"), fmt)
    return paths


def write_figures(report, out_dir, stem, histories=None, outputs=None, originals=None):
    """Heatmap, ensemble bars, training curves and one perturbation triptych
    per (strategy, source)."""
    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    paths = [plotting.transfer_heatmap(report, os.path.join(fig_dir, f"{stem}-transfer.png"))]
    if report.ensemble is not None:
        paths.append(plotting.ensemble_bars(report, os.path.join(fig_dir, f"{stem}-ensemble.png")))
    if histories:
        paths.append(plotting.training_curves(histories, os.path.join(fig_dir, f"{stem}-training.png")))
    if outputs and originals is not None:
        for (strategy, source), results in sorted(outputs.items()):
            hit = next((i for i, r in enumerate(results) if r.converged), 0)
            r = results[hit]
            title = f"{strategy} on {source}, sample {r.original_index}: {r.true_label} -> {r.pred_after}"
            paths.append(plotting.perturbation_triptych(
                originals[hit], r.adversarial,
                os.path.join(fig_dir, f"{stem}-{strategy}-{source}.png"), title))
    return paths


def replicate(cfg, out_dir=None, jobs=1, resume=True, figures=True):
    """Run the whole pipeline. Returns ``(report, written_paths)``."""
    out_dir = out_dir or cfg.out
    os.makedirs(out_dir, exist_ok=True)
    chash = cfg.hash()
    data = prepare(cfg)
    checkpoints, histories, ckpt_paths = train_models(cfg, data, out_dir, resume=resume)
    positions = attack_positions(data.test_labels, cfg.samples_per_user)
    outputs = run_attacks(cfg, checkpoints, data, positions, out_dir, jobs=jobs, resume=resume)
    metadata = {
        "config_hash": chash,
        "config": cfg.to_dict(),
        "checkpoints": {n: file_sha256(p) for n, p in sorted(ckpt_paths.items())},
        "test_samples": int(len(data.test_labels)),
        "attacked_samples": int(len(positions)),
    }
    report = evaluate(cfg, checkpoints, data, positions, outputs, metadata)
    stem = f"report-{chash}"
    written = write_reports(report, out_dir, stem)
    if figures:
        written["figures"] = write_figures(report, out_dir, stem, histories, outputs,
                                           data.test_images[positions])
    log.info("report written to %s", written["markdown"])
    return report, written
