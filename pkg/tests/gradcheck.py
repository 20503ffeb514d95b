"""Central finite-difference oracle, independent of the tape."""
import numpy as np

from complab.tensor import backward, no_grad

STEP = 1e-5
RTOL = 1e-4


def numeric_grad(f, arr, step=STEP):
    """d f() / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * step)
    return g


def rel_error(analytic, numeric, floor=1e-6):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def check_gradients(loss_fn, tensors):
    """Max relative error over every tensor; ``loss_fn()`` builds a fresh scalar Tensor."""
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    worst = 0.0
    for t in tensors:
        with no_grad():
            num = numeric_grad(lambda: loss_fn().item(), t.data)
        worst = max(worst, rel_error(t.grad, num))
    return worst
