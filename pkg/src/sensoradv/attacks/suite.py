"""Run every configured attack over a held-out set; serialize the results."""

import json
import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..dataset import load_tensor, save_tensor
from .base import AttackConfig, AttackResult, make_result, predict_one
from .boundary import boundary_attack
from .deepfool import deepfool_l2
from .fgsm import fgsm
from .jsma import jsma

log = logging.getLogger(__name__)

ATTACKS = {
    "fgsm": fgsm,
    "deepfool_l2": deepfool_l2,
    "jsma": jsma,
    "boundary": boundary_attack,
}


def sample_rng(seed, index):
    """Independent stream per (master seed, sample index)."""
    return np.random.default_rng([int(seed), int(index)])


def attack_one(model, image, label, config, index):
    attack = ATTACKS[config.strategy]
    try:
        return attack(model, image, int(label), config, index=index, rng=sample_rng(config.seed, index))
    except (FloatingPointError, ValueError) as exc:
        log.warning("%s failed on sample %d: %s", config.strategy, index, exc)
        pred = predict_one(model, image)
        return make_result(config.strategy, model, image, image.copy(), int(label), pred, False, 0,
                           index, error=str(exc))


_worker_model = None


def _init_worker(model):
    global _worker_model
    _worker_model = model


def _work(args):
    image, label, config, index = args
    return attack_one(_worker_model, image, label, config, index)


def run_attack_suite(model, images, labels, configs, indices=None, jobs=1):
    """One :class:`AttackResult` per (sample, strategy).

    Returns ``{strategy: [results in sample order]}``. ``indices`` name the
    samples (default ``0..N-1``) and seed their random streams, so results
    do not depend on ``jobs``. Failures on a sample are recorded as
    unconverged results rather than raised.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    indices = list(range(len(labels))) if indices is None else [int(i) for i in indices]
    if not (len(images) == len(labels) == len(indices)):
        raise ValueError("images, labels and indices must align")
    if isinstance(configs, AttackConfig):
        configs = [configs]
    out = {}
    for config in configs:
        tasks = [(images[i], labels[i], config, indices[i]) for i in range(len(labels))]
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(model,)) as ex:
                results = list(ex.map(_work, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
        else:
            results = [attack_one(model, *t) for t in tasks]
        rate = np.mean([r.converged for r in results]) if results else float("nan")
        log.info("%s: %d samples, converged %.3f", config.strategy, len(results), rate)
        out[config.strategy] = results
    return out


# ---------------------------------------------------------- serialization


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_results_jsonl(results, path, source=None):
    """One JSON record per result, in the given order."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            record = r.to_record()
            if source is not None:
                record["source"] = source
            fh.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")


def read_results_jsonl(path, adversarial=None):
    """Inverse of :func:`write_results_jsonl`; ``adversarial`` supplies the
    image tensor (``N x ...``) when one was dumped alongside."""
    results = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            rec = json.loads(line)
            results.append(AttackResult(
                strategy=rec["strategy"],
                adversarial=None if adversarial is None else np.array(adversarial[i]),
                original_index=rec["index"],
                true_label=rec["true_label"],
                pred_before=rec["pred_before"],
                pred_after=rec["pred_after"],
                converged=rec["converged"],
                l2_distance=rec["l2"],
                mse=rec["mse"],
                iterations_used=rec["iterations"],
                extra=rec.get("extra", {}),
            ))
    return results


def save_adversarial(results, path):
    save_tensor(np.stack([r.adversarial for r in results]), path)


def load_results(jsonl_path, tensor_path=None):
    tensor = load_tensor(tensor_path) if tensor_path is not None else None
    return read_results_jsonl(jsonl_path, tensor)
