"""Cross-model transfer tables, the weighted-vote ensemble and report files."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import softmax
from .models import MODEL_NAMES, forward_logits
from .training import misclassification_error

# Table row order: strategies sorted by display name, sources by depth.
STRATEGY_ORDER = ("boundary", "deepfool_l2", "fgsm", "jsma")
STRATEGY_LABELS = {
    "boundary": "Boundary Attack",
    "deepfool_l2": "DeepFool L2 Attack",
    "fgsm": "Gradient Sign Attack",
    "jsma": "Saliency Map Attack",
}
MODEL_LABELS = {"cnn4": "4-layer CNN", "cnn6": "6-layer CNN", "cnn9": "9-layer CNN", "cnn12": "12-layer CNN"}
ENSEMBLE = "ensemble"
REPORT_SCHEMA_VERSION = 1


def _model_rank(name):
    return MODEL_NAMES.index(name) if name in MODEL_NAMES else len(MODEL_NAMES)


def row_order(strategies, sources):
    strategies = sorted(strategies, key=lambda s: STRATEGY_ORDER.index(s) if s in STRATEGY_ORDER else 99)
    sources = sorted(sources, key=_model_rank)
    return [(None, None)] + [(s, m) for m in sources for s in strategies]


def row_label(strategy, source):
    if strategy is None:
        return "None"
    return f"{STRATEGY_LABELS.get(strategy, strategy)} on {MODEL_LABELS.get(source, source)}"


@dataclass
class TransferReport:
    """Misclassification errors: rows are (strategy, source) pairs after a
    clean ``(None, None)`` baseline row; columns are target models."""

    targets: list
    rows: list
    cells: np.ndarray
    ensemble: np.ndarray | None = None
    converged: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def row_index(self, strategy, source):
        return self.rows.index((strategy, source))

    def cell(self, strategy, source, target):
        return float(self.cells[self.row_index(strategy, source), self.targets.index(target)])

    def baseline(self, target):
        return self.cell(None, None, target)

    def is_diagonal(self, row, target):
        return self.rows[row][1] == target

    @property
    def column_count(self):
        return len(self.targets) + (self.ensemble is not None)


def _adversarial_images(output, indices):
    if isinstance(output, np.ndarray):
        return output
    got = [r.original_index for r in output]
    if indices is not None and got != list(indices):
        raise ValueError("attack outputs do not cover the evaluation samples in order")
    return np.stack([r.adversarial for r in output])


def transfer_matrix(models, attack_outputs, images, labels, indices=None, metadata=None):
    """Evaluate every target model on every (strategy, source) adversarial set.

    ``models`` maps name to model; ``attack_outputs`` maps ``(strategy,
    source)`` to a list of :class:`AttackResult` (or an image array) aligned
    with ``images``/``labels``.
    """
    labels = np.asarray(labels)
    targets = sorted(models, key=_model_rank)
    strategies = {s for s, _ in attack_outputs}
    sources = {m for _, m in attack_outputs}
    rows = row_order(strategies, sources)
    cells = np.zeros((len(rows), len(targets)))
    converged = {}
    for j, name in enumerate(targets):
        cells[0, j] = misclassification_error(models[name], images, labels)
    for i, (strategy, source) in enumerate(rows[1:], start=1):
        output = attack_outputs.get((strategy, source))
        if output is None:
            raise ValueError(f"missing attack output for {strategy} on {source}")
        if len(output) != len(labels):
            raise ValueError(f"{strategy} on {source}: {len(output)} results for {len(labels)} samples")
        adv = _adversarial_images(output, indices)
        if not isinstance(output, np.ndarray):
            converged[(strategy, source)] = float(np.mean([r.converged for r in output]))
        for j, name in enumerate(targets):
            cells[i, j] = misclassification_error(models[name], adv, labels)
    return TransferReport(targets, rows, cells, None, converged, dict(metadata or {}))


# --------------------------------------------------------------- ensemble


@dataclass
class EnsembleSpec:
    members: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.members) != len(self.weights):
            raise ValueError("need exactly one weight per member")
        if len(self.members) == 0 or np.any(self.weights <= 0):
            raise ValueError("ensemble weights must be strictly positive")


def ensemble_from_accuracy(members, images, labels):
    """Weights are each member's clean accuracy on ``images``."""
    weights = [1.0 - misclassification_error(m, images, labels) for m in members]
    return EnsembleSpec(list(members), np.array(weights))


def weighted_vote(predictions, weights, probabilities=None, class_count=None):
    """Combine member votes.

    ``predictions`` is ``members x N`` labels. Winner per sample is the class
    with the largest summed weight; ties go to the larger weighted sum of
    member probabilities (if given), then to the lowest class index.
    """
    predictions = np.asarray(predictions)
    weights = np.asarray(weights, dtype=np.float64)
    m, n = predictions.shape
    k = class_count or (probabilities.shape[2] if probabilities is not None else int(predictions.max()) + 1)
    votes = np.zeros((n, k))
    for member in range(m):
        np.add.at(votes, (np.arange(n), predictions[member]), weights[member])
    best = votes.max(axis=1, keepdims=True)
    tied = np.isclose(votes, best, rtol=1e-12, atol=0.0)
    if probabilities is not None:
        soft = np.einsum("m,mnk->nk", weights, probabilities)
        soft = np.where(tied, soft, -np.inf)
        sbest = soft.max(axis=1, keepdims=True)
        tied &= np.isclose(soft, sbest, rtol=1e-12, atol=0.0)
    return np.argmax(tied, axis=1)


def ensemble_predict(spec, images):
    """Ensemble labels for a batch; a single image gives a single int."""
    images = np.asarray(images, dtype=np.float64)
    single = images.shape == _image_shape(spec)
    batch = images[None] if single else images
    logits = [forward_logits(m, batch) for m in spec.members]
    preds = np.stack([np.argmax(lg, axis=1) for lg in logits])
    probs = np.stack([softmax(lg) for lg in logits])
    out = weighted_vote(preds, spec.weights, probs, class_count=probs.shape[2])
    return int(out[0]) if single else out


def _image_shape(spec):
    shape = tuple(spec.members[0].input_shape)
    return shape[:2] if len(shape) == 3 and shape[2] == 1 else shape


def ensemble_error(spec, images, labels):
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise ValueError("ensemble_error needs at least one sample")
    return float(np.mean(ensemble_predict(spec, images) != labels))


def ensemble_row(spec, attack_outputs, images, labels, indices=None):
    """Ensemble errors keyed like report rows, including the clean baseline."""
    errors = {(None, None): ensemble_error(spec, images, labels)}
    for key, output in attack_outputs.items():
        if len(output) != len(labels):
            raise ValueError(f"{key}: {len(output)} results for {len(labels)} samples")
        errors[key] = ensemble_error(spec, _adversarial_images(output, indices), labels)
    return errors


def attach_ensemble(report, errors):
    report.ensemble = np.array([errors[row] for row in report.rows])
    return report


# ---------------------------------------------------------------- reports


def _pct(x):
    return f"{100.0 * x:.2f}%"


def report_markdown(report):
    header = ["Adversarial Generation Strategy"] + [MODEL_LABELS.get(t, t) for t in report.targets]
    if report.ensemble is not None:
        header.append("CNN Ensemble")
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for i, (strategy, source) in enumerate(report.rows):
        cells = []
        for j, target in enumerate(report.targets):
            mark = "*" if report.is_diagonal(i, target) else ""
            cells.append(_pct(report.cells[i, j]) + mark)
        if report.ensemble is not None:
            cells.append(_pct(report.ensemble[i]))
        lines.append("| " + " | ".join([row_label(strategy, source)] + cells) + " |")
    lines.append("")
    lines.append("Misclassification error; * marks the model the examples were optimized for.")
    return "\n".join(lines) + "\n"


def report_csv_rows(report):
    yield ["strategy", "source", "target", "error", "diagonal"]
    for i, (strategy, source) in enumerate(report.rows):
        columns = [(t, report.cells[i, j]) for j, t in enumerate(report.targets)]
        if report.ensemble is not None:
            columns.append((ENSEMBLE, report.ensemble[i]))
        for target, value in columns:
            yield [strategy or "none", source or "", target, repr(float(value)), int(source == target)]


def report_json(report):
    rows = []
    for i, (strategy, source) in enumerate(report.rows):
        row = {
            "strategy": strategy,
            "source": source,
            "label": row_label(strategy, source),
            "cells": {t: float(report.cells[i, j]) for j, t in enumerate(report.targets)},
        }
        if report.ensemble is not None:
            row["ensemble"] = float(report.ensemble[i])
        if strategy is not None and (strategy, source) in report.converged:
            row["converged_rate"] = report.converged[(strategy, source)]
        rows.append(row)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "targets": list(report.targets),
        "rows": rows,
        "metadata": report.metadata,
    }


def emit_report(report, path, format="markdown"):
    """Write ``report`` as markdown, csv or json; output is deterministic."""
    if format in ("markdown", "md"):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(report_markdown(report))
    elif format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(report_csv_rows(report))
    elif format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report_json(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {format!r}")
    return path


def read_report_csv(path):
    """Cells from a CSV report as ``{(strategy, source, target): error}``."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            strategy = None if rec["strategy"] == "none" else rec["strategy"]
            source = rec["source"] or None
            out[(strategy, source, rec["target"])] = float(rec["error"])
    return out


def read_report_json(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    targets = data["targets"]
    rows = [(r["strategy"], r["source"]) for r in data["rows"]]
    cells = np.array([[r["cells"][t] for t in targets] for r in data["rows"]])
    ensemble = None
    if all("ensemble" in r for r in data["rows"]):
        ensemble = np.array([r["ensemble"] for r in data["rows"]])
    converged = {(r["strategy"], r["source"]): r["converged_rate"] for r in data["rows"] if "converged_rate" in r}
    return TransferReport(targets, rows, cells, ensemble, converged, data.get("metadata", {}))
