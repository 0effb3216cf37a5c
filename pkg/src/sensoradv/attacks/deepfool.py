import numpy as np

from .base import already_misclassified, logit_jacobian, make_result


def deepfool_l2(model, image, label, config, index=0, rng=None):
    """Minimal-L2 DeepFool.

    Each iteration linearizes every competitor logit difference
    ``f_l - f_label`` at the current point, takes the class whose linear
    boundary is nearest, and adds the exact step onto that boundary to the
    accumulated perturbation. The candidate is ``original + (1 + overshoot)
    * total`` clipped to bounds. ``extra["raw_l2"]`` holds the norm of the
    accumulated perturbation before overshoot.
    """
    image = np.asarray(image, dtype=np.float64)
    pred0, done = already_misclassified("deepfool_l2", model, image, label, index)
    if done is not None:
        done.extra["raw_l2"] = 0.0
        return done
    low, high = config.bounds
    overshoot = config["overshoot"]
    total = np.zeros_like(image)
    x = image.copy()
    max_iter = int(config["max_iter"])
    for it in range(max_iter + 1):
        logits, jac = logit_jacobian(model, x)
        if int(np.argmax(logits)) != label:
            return make_result("deepfool_l2", model, image, x, label, pred0, True, it, index,
                               raw_l2=float(np.linalg.norm(total)))
        if it == max_iter:
            break
        others = np.array([c for c in range(logits.shape[0]) if c != label])
        f = logits[others] - logits[label]
        w = jac[others] - jac[label]
        norms = np.sqrt(np.sum(w.reshape(len(others), -1) ** 2, axis=1))
        if not np.any(norms > 0):
            return make_result("deepfool_l2", model, image, x, label, pred0, False, it, index,
                               raw_l2=float(np.linalg.norm(total)),
                               error="degenerate linearization: zero gradient difference")
        with np.errstate(divide="ignore"):
            dist = np.where(norms > 0, np.abs(f) / np.where(norms > 0, norms, 1.0), np.inf)
        j = int(np.argmin(dist))
        total = total + (np.abs(f[j]) / norms[j] ** 2) * w[j]
        x = np.clip(image + (1.0 + overshoot) * total, low, high)
    return make_result("deepfool_l2", model, image, x, label, pred0, False, max_iter,
                       index, raw_l2=float(np.linalg.norm(total)))
