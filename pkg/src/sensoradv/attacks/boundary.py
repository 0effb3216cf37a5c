import numpy as np

from .base import make_result, predict_batch


def _norms(batch, origin):
    diff = (batch - origin).reshape(batch.shape[0], -1)
    return np.sqrt(np.sum(diff * diff, axis=1))


def _initial_point(model, image, label, config, rng):
    """Uniform-noise start, pulled back towards the original.

    Noise images are drawn in batches until at least one is adversarial
    (at most ``init_draws`` draws). Each adversarial draw is then
    bisected along the segment to the original, keeping the adversarial
    end, and the closest resulting point wins.
    """
    low, high = config.bounds
    batch = int(config["batch_size"])
    draws = 0
    while draws < config["init_draws"]:
        n = int(min(batch, config["init_draws"] - draws))
        noise = rng.uniform(low, high, size=(n,) + image.shape)
        draws += n
        adv = noise[predict_batch(model, noise) != label]
        if adv.shape[0] == 0:
            continue
        lo_t = np.zeros(adv.shape[0])
        hi_t = np.ones(adv.shape[0])
        shape = (-1,) + (1,) * image.ndim
        for _ in range(int(config["init_search_steps"])):
            mid = (lo_t + hi_t) / 2
            blend = image + mid.reshape(shape) * (adv - image)
            is_adv = predict_batch(model, blend) != label
            hi_t = np.where(is_adv, mid, hi_t)
            lo_t = np.where(is_adv, lo_t, mid)
        points = image + hi_t.reshape(shape) * (adv - image)
        best = int(np.argmin(_norms(points, image)))
        return points[best], draws
    return None, draws


def boundary_attack(model, image, label, config, index=0, rng=None):
    """Decision-based boundary attack; only class predictions are queried.

    Per iteration, ``batch_size`` candidates are proposed: a random
    orthogonal move of relative size ``delta`` on the sphere around the
    original, then a relative step ``epsilon`` towards the original. The
    closest adversarial candidate replaces the current point only if it
    is closer, so accepted distances never increase. ``delta`` adapts to
    the adversarial rate of the spherical moves and ``epsilon`` to that of
    the final candidates.
    """
    image = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng([config.seed, index]) if rng is None else rng
    pred0 = int(predict_batch(model, image[None])[0])
    if pred0 != label:
        return make_result("boundary", model, image, image.copy(), label, pred0, True, 0, index,
                           distances=[0.0])
    low, high = config.bounds
    current, draws = _initial_point(model, image, label, config, rng)
    if current is None:
        return make_result("boundary", model, image, image.copy(), label, pred0, False, 0, index,
                           distances=[], init_draws=draws,
                           error="no adversarial starting point found")
    delta, eps = float(config["delta"]), float(config["epsilon"])
    dist = float(_norms(current[None], image)[0])
    distances = [dist]
    batch = int(config["batch_size"])
    iterations = int(config["iterations"])
    for _ in range(iterations):
        diff = current - image
        unit = diff.reshape(-1) / dist
        eta = rng.normal(size=(batch, image.size))
        eta *= (delta * dist) / np.linalg.norm(eta, axis=1, keepdims=True)
        eta -= np.outer(eta @ unit, unit)
        moved = diff.reshape(1, -1) + eta
        moved *= dist / np.linalg.norm(moved, axis=1, keepdims=True)
        spherical = np.clip(image.reshape(1, -1) + moved, low, high)
        candidates = np.clip(spherical + eps * (image.reshape(1, -1) - spherical), low, high)
        spherical = spherical.reshape((batch,) + image.shape)
        candidates = candidates.reshape((batch,) + image.shape)

        sph_rate = float(np.mean(predict_batch(model, spherical) != label))
        cand_adv = predict_batch(model, candidates) != label
        cand_rate = float(np.mean(cand_adv))
        if sph_rate > config["high_rate"]:
            delta *= config["grow"]
        elif sph_rate < config["low_rate"]:
            delta *= config["shrink"]
        if cand_rate > config["high_rate"]:
            eps *= config["grow"]
        elif cand_rate < config["low_rate"]:
            eps *= config["shrink"]

        if cand_adv.any():
            adv = candidates[cand_adv]
            d = _norms(adv, image)
            best = int(np.argmin(d))
            if d[best] < dist:
                current, dist = adv[best], float(d[best])
        distances.append(dist)
    return make_result("boundary", model, image, current, label, pred0, True, iterations, index,
                       distances=distances, init_draws=draws)
