"""Central finite-difference gradient verification."""

import numpy as np

from . import ops
from .tensor import backward, no_grad, zero_grad


def _eval_with_patterns(loss_fn):
    with no_grad(), ops.record_patterns() as trace:
        value = float(loss_fn().data)
    return value, trace


def _patterns_equal(a, b):
    if len(a) != len(b):
        return False
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(loss_fn, tensors, step=1e-5, rng=None, samples_per_tensor=64,
               zero_tol=None):
    """Max relative error between analytic and numeric gradients.

    ``loss_fn`` rebuilds the scalar loss from the current ``tensors`` data
    (fresh forward every call).  Elements are sampled per tensor; samples
    whose +-step perturbation flips any rectifier activation pattern are
    excluded (the kink makes central differences meaningless there).
    Relative error is |a - n| / max(|a|, |n|, 1e-12).

    Central differences cannot resolve differences below the cancellation
    floor eps * |f| / (2 * step); samples whose absolute analytic/numeric
    gap is under ``zero_tol`` (default: 1e3 times that floor) count as
    agreeing, the same role the absolute tolerance plays in standard
    gradient checkers.
    """
    if not (1e-7 <= step <= 1e-3):
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    tensors = list(tensors)
    rng = rng or np.random.default_rng(0)

    zero_grad(tensors)
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    if zero_tol is None:
        zero_tol = 1e3 * np.finfo(np.float64).eps * max(1.0, abs(float(loss.data))) / (2.0 * step)

    worst = 0.0
    checked = 0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= samples_per_tensor else rng.choice(n, samples_per_tensor, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            f_plus, pat_plus = _eval_with_patterns(loss_fn)
            flat[i] = orig - step
            f_minus, pat_minus = _eval_with_patterns(loss_fn)
            flat[i] = orig
            if not _patterns_equal(pat_plus, pat_minus):
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            ana = float(a.reshape(-1)[i])
            checked += 1
            if abs(ana - numeric) <= zero_tol:
                continue
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-12)
            worst = max(worst, rel)
    if checked == 0:
        raise RuntimeError("grad_check: all sampled points sat on rectifier kinks")
    return worst
