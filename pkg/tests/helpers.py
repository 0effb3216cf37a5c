"""Oracles and small models shared by the test modules."""

import itertools

import numpy as np

from sensoradv.autodiff import Dense, Network


def linear(weights, bias=None):
    """Single dense layer; ``weights`` is ``inputs x classes``."""
    weights = np.asarray(weights, dtype=np.float64)
    layer = Dense(*weights.shape)
    layer.params["W"][...] = weights
    if bias is not None:
        layer.params["b"][...] = bias
    return Network([layer], (weights.shape[0],))


def binary_affine(w, b=0.0):
    """Class 1 logit ``w.x + b``, class 0 logit fixed at zero."""
    w = np.asarray(w, dtype=np.float64)
    return linear(np.stack([np.zeros_like(w), w], axis=1), [0.0, b])


def affine_instances(count, seed, dim=2):
    """Binary affine problems ``(w, b, x, f(x))`` whose boundary crosses
    the box ``[-1, 1]^dim``."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        w = rng.normal(size=dim)
        b = -float(w @ rng.uniform(-1, 1, size=dim))
        x = rng.uniform(-1, 1, size=dim)
        yield w, b, x, float(w @ x + b)


def vote_oracle(votes, weights, probs):
    """Weighted vote by enumerating member subsets: the subset voting
    exactly for a class contributes its total weight to that class.
    Ties go to the larger weighted probability, then the lowest class."""
    m = len(votes)
    k = probs.shape[1]
    score = np.zeros(k)
    for size in range(1, m + 1):
        for subset in itertools.combinations(range(m), size):
            chosen = {votes[i] for i in subset}
            rest = [i for i in range(m) if i not in subset]
            if len(chosen) == 1 and all(votes[i] not in chosen for i in rest):
                score[chosen.pop()] = sum(weights[i] for i in subset)
    top = [c for c in range(k) if score[c] == score.max()]
    if len(top) > 1:
        soft = {c: sum(weights[i] * probs[i, c] for i in range(m)) for c in top}
        best = max(soft.values())
        top = [c for c in top if soft[c] == best]
    return min(top)


def random_vote_case(rng):
    k = int(rng.integers(2, 5))
    votes = rng.integers(0, k, size=4)
    # coarse weights make exact vote ties common
    if rng.uniform() < 0.5:
        weights = rng.choice([0.25, 0.5, 0.75, 1.0], size=4)
    else:
        weights = rng.uniform(0.01, 1, 4)
    probs = rng.dirichlet(np.ones(k), size=4)
    return k, votes, weights, probs
