"""Central finite-difference oracle for gradients of scalar tensor functions."""
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_error: float
    worst: tuple = ()
    nan_coords: list = field(default_factory=list)


def finite_diff_report(f, x, h=1e-5):
    """Compare autodiff gradients of ``f`` with central differences.

    ``x`` is an array or a sequence of arrays, passed to ``f`` as Tensors.
    The per-coordinate error is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if isinstance(x, (list, tuple)) and x and all(isinstance(a, np.ndarray) for a in x):
        arrays = [np.array(a, dtype=np.float64) for a in x]
    else:
        arrays = [np.array(x, dtype=np.float64)]

    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    out = f(*inputs)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst_err, worst = 0.0, ()
    nans = []
    for k, base in enumerate(arrays):
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            with no_grad():
                base[idx] = orig + h
                fp = f(*[Tensor(a) for a in arrays]).item()
                base[idx] = orig - h
                fm = f(*[Tensor(a) for a in arrays]).item()
            base[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[k][idx]
            err = abs(a - numeric) / max(1.0, abs(a))
            if np.isnan(err):
                nans.append((k, idx))
                continue
            if err > worst_err:
                worst_err, worst = err, (k, idx)
    if nans:
        worst_err = float("nan")
    return GradCheckReport(max_error=float(worst_err), worst=worst, nan_coords=nans)


def finite_diff_check(f, x, h=1e-5):
    """Max relative gradient error of ``f`` at ``x`` (NaN if any coordinate is NaN)."""
    return finite_diff_report(f, x, h).max_error
