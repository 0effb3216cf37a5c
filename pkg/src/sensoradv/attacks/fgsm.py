import numpy as np

from .base import already_misclassified, loss_gradient, make_result, predict_batch


def epsilon_grid(config):
    return np.geomspace(config["eps_min"], config["eps_max"], int(config["steps"]))


def fgsm(model, image, label, config, index=0, rng=None):
    """Fast gradient sign attack with an ascending step-size search.

    Every candidate ``clip(image + eps * sign(grad))`` on the grid is
    scored in one batch; the smallest ``eps`` that changes the prediction
    away from ``label`` wins. Without a flip the largest-step candidate is
    returned unconverged.
    """
    image = np.asarray(image, dtype=np.float64)
    pred0, done = already_misclassified("fgsm", model, image, label, index)
    if done is not None:
        done.extra["epsilon"] = 0.0
        return done
    low, high = config.bounds
    direction = np.sign(loss_gradient(model, image, label))
    grid = epsilon_grid(config)
    candidates = np.clip(image + grid.reshape((-1,) + (1,) * image.ndim) * direction, low, high)
    flipped = np.flatnonzero(predict_batch(model, candidates) != label)
    if flipped.size:
        k = int(flipped[0])
        return make_result("fgsm", model, image, candidates[k], label, pred0, True, k + 1, index,
                           epsilon=float(grid[k]))
    return make_result("fgsm", model, image, candidates[-1], label, pred0, False, len(grid), index,
                       epsilon=float(grid[-1]))
