"""Random finite-difference cases for every differentiable op.

Each builder takes a numpy Generator and returns ``(f, inputs)`` where ``f``
maps input Tensors to a scalar Tensor. Inputs are kept away from the kinks of
relu, clamp_min, min and maxpool so central differences stay valid.
"""
import numpy as np

from kinjoint import joint
from kinjoint.engine import tensor as T


def _away_from(rng, shape, point=0.0, gap=1e-2):
    x = rng.normal(size=shape)
    mask = np.abs(x - point) < gap
    x[mask] += np.sign(x[mask] - point + 1e-300) * 2 * gap
    return x


def _distinct(rng, shape, gap=1e-3):
    """Values whose pairwise gaps exceed ``gap`` (keeps min/max unambiguous)."""
    n = int(np.prod(shape))
    vals = np.cumsum(rng.uniform(gap * 10, 1.0, size=n))
    return rng.permutation(vals - vals.mean()).reshape(shape)


def _weights(rng, shape):
    # random projection turns a tensor output into a scalar with a generic gradient
    return rng.normal(size=shape)


def _project(y, w):
    return T.tsum(T.mul(y, w))


def _shape(rng, ndim=2, lo=1, hi=4):
    return tuple(int(s) for s in rng.integers(lo, hi + 1, size=ndim))


def c_add(rng):
    s = _shape(rng)
    b_shape = s if rng.random() < 0.5 else (1, s[1])
    w = _weights(rng, s)
    return (lambda a, b: _project(T.add(a, b), w)), [rng.normal(size=s), rng.normal(size=b_shape)]


def c_sub(rng):
    s = _shape(rng)
    w = _weights(rng, s)
    return (lambda a, b: _project(T.sub(a, b), w)), [rng.normal(size=s), rng.normal(size=(s[1],))]


def c_neg(rng):
    s = _shape(rng)
    w = _weights(rng, s)
    return (lambda a: _project(T.neg(a), w)), [rng.normal(size=s)]


def c_mul(rng):
    s = _shape(rng)
    w = _weights(rng, s)
    return (lambda a, b: _project(T.mul(a, b), w)), [rng.normal(size=s), rng.normal(size=(s[0], 1))]


def c_relu(rng):
    s = _shape(rng)
    w = _weights(rng, s)
    return (lambda a: _project(T.relu(a), w)), [_away_from(rng, s)]


def c_sigmoid(rng):
    s = _shape(rng)
    w = _weights(rng, s)
    return (lambda a: _project(T.sigmoid(a), w)), [3 * rng.normal(size=s)]


def c_exp(rng):
    s = _shape(rng)
    w = _weights(rng, s)
    return (lambda a: _project(T.exp(a), w)), [rng.normal(size=s)]


def c_log(rng):
    s = _shape(rng)
    w = _weights(rng, s)
    return (lambda a: _project(T.log(a), w)), [rng.uniform(0.2, 3.0, size=s)]


def c_clamp_min(rng):
    s = _shape(rng)
    w = _weights(rng, s)
    return (lambda a: _project(T.clamp_min(a, 0.1), w)), [_away_from(rng, s, 0.1)]


def c_sum(rng):
    s = _shape(rng, 3)
    axis = int(rng.integers(0, 3))
    w = _weights(rng, s[:axis] + s[axis + 1:])
    return (lambda a: _project(T.tsum(a, axis=axis), w)), [rng.normal(size=s)]


def c_mean(rng):
    s = _shape(rng, 3)
    axis = int(rng.integers(0, 3))
    w = _weights(rng, s[:axis] + (1,) + s[axis + 1:])
    return (lambda a: _project(T.mean(a, axis=axis, keepdims=True), w)), [rng.normal(size=s)]


def c_min(rng):
    s = _shape(rng, 2, lo=2)
    axis = int(rng.integers(0, 2))
    w = _weights(rng, s[:axis] + s[axis + 1:])
    return (lambda a: _project(T.tmin(a, axis=axis), w)), [_distinct(rng, s)]


def c_reshape(rng):
    s = _shape(rng, 2)
    w = _weights(rng, (s[0] * s[1],))
    return (lambda a: _project(T.reshape(a, (-1,)), w)), [rng.normal(size=s)]


def c_flatten(rng):
    s = _shape(rng, 4)
    w = _weights(rng, (s[0], s[1] * s[2] * s[3]))
    return (lambda a: _project(T.flatten(a), w)), [rng.normal(size=s)]


def c_transpose(rng):
    s = _shape(rng, 3)
    axes = tuple(int(a) for a in rng.permutation(3))
    w = _weights(rng, tuple(s[a] for a in axes))
    return (lambda a: _project(T.transpose(a, axes), w)), [rng.normal(size=s)]


def c_getitem(rng):
    s = _shape(rng, 2, lo=2)
    if rng.random() < 0.5:
        index = (slice(None), slice(0, s[1] - 1))
    else:
        index = (rng.integers(0, s[0], size=3),)
    w = _weights(rng, rng.normal(size=s)[index].shape)
    return (lambda a: _project(T.getitem(a, index), w)), [rng.normal(size=s)]


def c_gather(rng):
    s = _shape(rng, 2, lo=2)
    idx = rng.integers(0, s[1], size=s[0])
    w = _weights(rng, (s[0],))
    return (lambda a: _project(T.gather(a, idx), w)), [rng.normal(size=s)]


def c_concat(rng):
    s = _shape(rng, 2)
    extra = int(rng.integers(1, 4))
    w = _weights(rng, (s[0], s[1] + extra))
    return (lambda a, b: _project(T.concat([a, b], axis=1), w)), [rng.normal(size=s), rng.normal(size=(s[0], extra))]


def c_stack(rng):
    s = _shape(rng, 2)
    w = _weights(rng, (s[0], 2, s[1]))
    return (lambda a, b: _project(T.stack([a, b], axis=1), w)), [rng.normal(size=s), rng.normal(size=s)]


def c_matmul(rng):
    n, k, m = _shape(rng, 3)
    w = _weights(rng, (n, m))
    return (lambda a, b: _project(T.matmul(a, b), w)), [rng.normal(size=(n, k)), rng.normal(size=(k, m))]


def c_conv2d(rng):
    n, cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.integers(0, 2))
    h = int(rng.integers(k, 6))
    x = rng.normal(size=(n, cin, h, h))
    wt = rng.normal(size=(cout, cin, k, k))
    b = rng.normal(size=(cout,))
    oh = (h + 2 * pad - k) // stride + 1
    w = _weights(rng, (n, cout, oh, oh))
    return (lambda x, wt, b: _project(T.conv2d(x, wt, b, stride=stride, padding=pad), w)), [x, wt, b]


def c_maxpool2d(rng):
    n, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    h = 2 * int(rng.integers(1, 4))
    w = _weights(rng, (n, c, h // 2, h // 2))
    return (lambda a: _project(T.maxpool2d(a, 2), w)), [_distinct(rng, (n, c, h, h))]


def c_upsample2d(rng):
    n, c, h = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
    w = _weights(rng, (n, c, 2 * h, 2 * h))
    return (lambda a: _project(T.upsample2d(a, 2), w)), [rng.normal(size=(n, c, h, h))]


def c_softmax(rng):
    s = _shape(rng, 2, lo=2, hi=5)
    w = _weights(rng, s)
    return (lambda a: _project(T.softmax(a, axis=-1), w)), [2 * rng.normal(size=s)]


def c_weighted_cross_entropy(rng):
    n, c = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    target = rng.integers(0, c, size=n)
    weights = rng.uniform(0.1, 8.0, size=c)
    return (lambda a: T.weighted_cross_entropy(T.softmax(a, axis=-1), target, weights)), [rng.normal(size=(n, c))]


def c_joint_loss(rng):
    n = int(rng.integers(1, 4))
    labels = rng.integers(0, 5, size=n)
    weights = joint.LossWeights()

    def f(*logits):
        heads = [T.softmax(z, axis=-1) for z in logits]
        return joint.joint_loss(heads, joint.joint_output_tensor(heads), labels, weights)

    # distinct negatives per row so the min is not at a tie
    logits = [rng.normal(size=(n, 2)) for _ in range(4)]
    for i in range(n):
        gaps = rng.permutation(4) * 0.3
        for k in range(4):
            logits[k][i, 0] = logits[k][i, 1] + gaps[k] - 0.45
    return f, logits


CASES = {
    name[2:]: fn for name, fn in sorted(globals().items()) if name.startswith("c_") and callable(fn)
}
