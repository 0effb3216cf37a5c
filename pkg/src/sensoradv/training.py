"""Mini-batch Adam training and the misclassification-error metric."""

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DivergenceError
from .models import Checkpoint, predict
from .signal_image import ChannelStats, encode_dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate and batch_size must be positive, epochs >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1) or self.eps <= 0:
            raise ValueError("Adam betas must lie in (0, 1) and eps > 0")


class AdamState:
    """First/second moment buffers and the step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0


def adam_step(params, grads, state, config):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and Adam state disagree in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {i} at Adam step {state.t + 1}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    step = config.learning_rate / (1.0 - b1 ** state.t)
    corr2 = 1.0 / (1.0 - b2 ** state.t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step * m / (np.sqrt(v * corr2) + config.eps)
    return params, state


def misclassification_error(model, images, labels):
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise ValueError("misclassification_error needs at least one sample")
    if len(images) != labels.size:
        raise ValueError(f"{len(images)} images but {labels.size} labels")
    return float(np.mean(predict(model, images) != labels))


def fit(model, images, labels, config, log_every=1):
    """Train ``model`` in place; returns per-epoch ``(epoch, loss, train_error)``.

    ``loss`` is the sample-weighted mean training-mode loss over the epoch;
    ``train_error`` is measured in eval mode once the epoch ends. The final
    partial batch is kept.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds training-set size {n}")
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    params = model.parameters()
    state = AdamState(params)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss, _, _ = model.loss_and_gradients(images[idx], labels[idx], train=True, rng=dropout_rng)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}, batch {b}")
            try:
                adam_step(params, model.gradients(), state, config)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} (epoch {epoch}, batch {b})") from None
            total += loss * len(idx)
        err = misclassification_error(model, images, labels)
        history.append((epoch, total / n, err))
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.5f train_error %.4f", epoch, total / n, err)
    return history


def train(model, dataset, split, encoder, config):
    """Encode the training indices with train-only stats, fit, and checkpoint.

    Returns ``(checkpoint, history)``.
    """
    norm = ChannelStats.from_recordings(dataset.recordings[i] for i in split.train)
    images, labels = encode_dataset(dataset, split.train, encoder, norm)
    history = fit(model, images, labels, config)
    metadata = {
        "seed": config.seed,
        "epochs": config.epochs,
        "final_train_loss": history[-1][1] if history else None,
        "train_config": asdict(config),
        "encoder": asdict(encoder),
        "split_seed": split.seed,
    }
    return Checkpoint(model, metadata, norm.to_dict()), history


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "train_error"])
        for epoch, loss, err in history:
            writer.writerow([epoch, repr(float(loss)), repr(float(err))])


def read_history_csv(path):
    with open(path, newline="") as fh:
        return [(int(r["epoch"]), float(r["loss"]), float(r["train_error"])) for r in csv.DictReader(fh)]
