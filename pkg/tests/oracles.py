"""Brute-force references written independently of the library."""
import math

import numpy as np


def ref_joint_output(heads):
    negs = [heads[n][0] for n in range(4)]
    smallest = negs[0]
    for v in negs[1:]:
        if v < smallest:
            smallest = v
    return [smallest] + [heads[n][1] for n in range(4)]


def ref_argmax(values):
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def ref_identify(o):
    exps = [math.exp(v) for v in o]
    total = sum(exps)
    probs = [e / total for e in exps]
    # softmax is monotone: equal o entries give equal probs, so compare on o for ties
    best = 0
    for i in range(1, 5):
        if o[i] > o[best]:
            best = i
    assert probs[best] == max(probs)
    return best


def ref_ensemble(heads):
    pos = [heads[n][1] for n in range(4)]
    if max(pos) < 0.5:
        return 0
    return ref_argmax(pos) + 1


def random_heads(rng, n):
    """Random head outputs with frequent exact ties and 0.5 boundaries."""
    p = rng.random((n, 4))
    grid = rng.random((n, 4)) < 0.3
    p[grid] = rng.integers(0, 11, size=grid.sum()) / 10.0
    return np.stack([1.0 - p, p], axis=-1)


def ref_f_beta(cm, c, beta):
    tp = cm[c][c]
    fp = sum(cm[r][c] for r in range(len(cm))) - tp
    fn = sum(cm[c]) - tp
    if tp == 0:
        return 0.0 if fp + fn else 1.0
    b2 = beta * beta
    return (1 + b2) * tp / ((1 + b2) * tp + b2 * fn + fp)
