import math

import numpy as np

from ..autodiff import softmax
from .base import already_misclassified, logit_jacobian, make_result


def saliency_map(target_grad, others_grad):
    """Increase-direction saliency per feature.

    Zero where raising the feature lowers the target logit or raises the
    summed competitor logits; otherwise ``target_grad * |others_grad|``.
    """
    target_grad = np.asarray(target_grad, dtype=np.float64)
    others_grad = np.asarray(others_grad, dtype=np.float64)
    keep = (target_grad >= 0) & (others_grad <= 0)
    return np.where(keep, target_grad * np.abs(others_grad), 0.0)


def select_features(scores, x, high, eligible=None, count=2):
    """Indices (flat) of the ``count`` best positive scores among features
    that still have headroom below ``high``. May return fewer, or none."""
    scores = np.where(x.reshape(-1) < high, scores.reshape(-1), 0.0)
    if eligible is not None:
        scores = np.where(eligible.reshape(-1), scores, 0.0)
    positive = np.flatnonzero(scores > 0)
    if positive.size == 0:
        return positive
    # stable descending sort keeps the lowest index first among equal scores
    order = positive[np.argsort(-scores[positive], kind="stable")]
    return order[:count]


def jsma(model, image, label, config, index=0, rng=None):
    """Jacobian saliency-map attack towards the runner-up class.

    The target is the second most probable class at the original image and
    stays fixed. Saliency pits the target logit against the true-class
    logit (``competitors="label"``) or against the sum of all non-target
    logits (``competitors="all"``). Each iteration moves the two most salient features by
    ``theta * (high - low)``: upwards only with ``direction="increase"``,
    or with ``direction="both"`` also downwards where lowering a feature
    helps the target. At most ``gamma * pixel_count`` distinct
    features may be touched, and each at most ``max_per_pixel`` times;
    touched features can move again while they have headroom. Stops
    on any misclassification, when no eligible feature has positive
    saliency, or after ``max_iter`` iterations.
    """
    image = np.asarray(image, dtype=np.float64)
    pred0, done = already_misclassified("jsma", model, image, label, index)
    if done is not None:
        return done
    low, high = config.bounds
    budget = int(math.floor(config["gamma"] * image.size + 1e-9))
    probs = softmax(model.logits(image[None]))[0]
    ranked = np.argsort(-probs, kind="stable")
    target = int(ranked[1] if ranked[0] == label else ranked[0])
    if budget == 0:
        return make_result("jsma", model, image, image.copy(), label, pred0, False, 0, index,
                           target=target, modified=0, error="feature budget is zero")
    k = probs.shape[0]
    rows = np.zeros((2, k))
    rows[0, target] = 1.0
    if config["competitors"] == "label":
        rows[1, label] = 1.0
    else:
        rows[1, :] = 1.0
        rows[1, target] = 0.0
    step = config["theta"] * (high - low)
    x = image.copy()
    touched = np.zeros(image.size, dtype=bool)
    counts = np.zeros(image.size, dtype=np.int64)
    cap = int(config["max_per_pixel"])
    both = config["direction"] == "both"
    flat = x.reshape(-1)
    max_iter = int(config["max_iter"])
    for it in range(max_iter + 1):
        logits, jac = logit_jacobian(model, x, rows)
        pred = int(np.argmax(logits))
        if pred != label:
            return make_result("jsma", model, image, x, label, pred0, True, it, index,
                               target=target, modified=int(touched.sum()),
                               reached_target=bool(pred == target))
        if it == max_iter:
            break
        remaining = max(budget - int(touched.sum()), 0)
        eligible = counts < cap
        if remaining == 0:
            eligible &= touched
        up = np.where(flat < high, saliency_map(jac[0], jac[1]).reshape(-1), 0.0)
        if both:
            down = np.where(flat > low, saliency_map(-jac[0], -jac[1]).reshape(-1), 0.0)
            sign = np.where(down > up, -1.0, 1.0)
            # headroom was applied per direction above
            picks = select_features(np.maximum(up, down), x, np.inf, eligible)
        else:
            sign = np.ones_like(up)
            picks = select_features(up, x, high, eligible)
        fresh = picks[~touched[picks]]
        if fresh.size > remaining:
            picks = np.setdiff1d(picks, fresh[remaining:])
        if picks.size == 0:
            return make_result("jsma", model, image, x, label, pred0, False, it, index,
                               target=target, modified=int(touched.sum()),
                               error="no eligible feature with positive saliency")
        flat[picks] = np.clip(flat[picks] + sign[picks] * step, low, high)
        touched[picks] = True
        counts[picks] += 1
    return make_result("jsma", model, image, x, label, pred0, False, max_iter, index,
                       target=target, modified=int(touched.sum()))
