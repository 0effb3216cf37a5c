"""Shared attack types and the small model protocol the attacks rely on.

An attackable model exposes ``logits(x) -> N x K``. The gradient-based
strategies also call ``input_gradient(x, upstream)`` and
``logits_and_gradient(x, upstream)``, which return the gradient of
``sum(upstream * logits(x))`` with respect to ``x``; a single sample with
``B`` upstream rows yields ``B`` gradients.
"""

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import softmax_xent

STRATEGIES = ("fgsm", "deepfool_l2", "jsma", "boundary")

DEFAULT_PARAMS = {
    "fgsm": {"eps_min": 1e-3, "eps_max": 1.0, "steps": 20},
    "deepfool_l2": {"max_iter": 50, "overshoot": 0.02},
    "jsma": {"theta": 0.1, "gamma": 1.0, "max_per_pixel": 7, "max_iter": 2000,
             "direction": "both", "competitors": "label"},
    "boundary": {"batch_size": 20, "iterations": 5, "init_draws": 1000, "init_search_steps": 12,
                 "delta": 0.1, "epsilon": 0.1, "grow": 1.1, "shrink": 0.9,
                 "high_rate": 0.5, "low_rate": 0.2},
}


@dataclass(frozen=True)
class AttackConfig:
    strategy: str
    bounds: tuple = (0.0, 1.0)
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown attack strategy {self.strategy!r}")
        low, high = self.bounds
        if not low < high:
            raise ValueError("attack bounds need low < high")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.strategy])
        if unknown:
            raise ValueError(f"unknown {self.strategy} parameters: {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[self.strategy], **self.params}
        for key in ("steps", "max_iter", "iterations", "batch_size", "init_draws", "max_per_pixel"):
            if key in merged and merged[key] < 1:
                raise ValueError(f"{self.strategy}.{key} must be >= 1")
        if merged.get("direction", "both") not in ("increase", "both"):
            raise ValueError(f"{self.strategy}.direction must be 'increase' or 'both'")
        if merged.get("competitors", "label") not in ("label", "all"):
            raise ValueError(f"{self.strategy}.competitors must be 'label' or 'all'")
        object.__setattr__(self, "params", merged)

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self):
        return {"strategy": self.strategy, "bounds": list(self.bounds), "seed": self.seed,
                "params": dict(self.params)}


@dataclass
class AttackResult:
    strategy: str
    adversarial: np.ndarray = field(repr=False)
    original_index: int
    true_label: int
    pred_before: int
    pred_after: int
    converged: bool
    l2_distance: float
    mse: float
    iterations_used: int
    extra: dict = field(default_factory=dict)

    def to_record(self):
        return {
            "strategy": self.strategy,
            "index": self.original_index,
            "true_label": self.true_label,
            "pred_before": self.pred_before,
            "pred_after": self.pred_after,
            "converged": self.converged,
            "l2": self.l2_distance,
            "mse": self.mse,
            "iterations": self.iterations_used,
            "extra": self.extra,
        }


def predict_batch(model, x):
    return np.argmax(model.logits(x), axis=1)


def predict_one(model, image):
    return int(predict_batch(model, image[None])[0])


def loss_gradient(model, image, label):
    """Input gradient of the cross-entropy loss at a single image."""
    logits = model.logits(image[None])
    _, _, dlogits = softmax_xent(logits, [label])
    grad = model.input_gradient(image[None], dlogits)[0]
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite input gradient")
    return grad


def logit_jacobian(model, image, rows=None):
    """Logits at ``image`` and gradients of weighted logit sums.

    Row ``i`` of ``rows`` (``B x K``) weights the logits for gradient ``i``;
    the default is the identity, i.e. the full ``K x input`` Jacobian.
    """
    x = image[None]
    if rows is None:
        k = model.logits(x).shape[1]
        rows = np.eye(k)
    logits, jac = model.logits_and_gradient(x, np.atleast_2d(rows))
    if not np.all(np.isfinite(jac)):
        raise FloatingPointError("non-finite logit Jacobian")
    return logits[0], jac


def make_result(strategy, model, original, adversarial, label, pred_before, converged,
                iterations, index=0, **extra):
    adversarial = np.asarray(adversarial, dtype=np.float64)
    pred_after = predict_one(model, adversarial)
    diff = adversarial - original
    sq = float(np.sum(diff * diff))
    if converged and pred_after == label:
        # the strategy believed it crossed but the final clipped point did not
        converged = False
        extra.setdefault("error", "final point classified as the true label")
    return AttackResult(
        strategy=strategy,
        adversarial=adversarial,
        original_index=int(index),
        true_label=int(label),
        pred_before=int(pred_before),
        pred_after=int(pred_after),
        converged=bool(converged),
        l2_distance=float(np.sqrt(sq)),
        mse=sq / diff.size,
        iterations_used=int(iterations),
        extra=extra,
    )


def already_misclassified(strategy, model, image, label, index):
    pred = predict_one(model, image)
    if pred != label:
        return pred, make_result(strategy, model, image, image.copy(), label, pred, True, 0, index)
    return pred, None
