"""Adam with bias correction, operating in place on parameter tensors."""
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params, grads, state):
    """Apply one Adam update to ``params`` (a sequence of Tensors) in place.

    ``grads`` aligns with ``params``; a ``None`` gradient counts as zero.
    Moment buffers are created lazily on the first step. Returns
    ``(params, state)``.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if state.step < 0:
        raise ValueError("adam_step: negative step count")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeError(f"adam_step: state tracks {len(state.first_moment)} params, got {len(params)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad {g.shape} / moment {m.shape} vs param {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


class Adam:
    """Thin convenience wrapper binding an :class:`AdamState` to named parameters."""

    def __init__(self, named_params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.names = list(named_params)
        self.params = [named_params[k] for k in self.names]
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)
