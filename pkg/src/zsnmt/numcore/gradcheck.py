import numpy as np

from .tensor import EvaluationError, Tape


def grad_check(f, x, h=1e-3, floor=1e-6):
    """Worst per-coordinate relative error between tape and finite-difference gradients.

    ``f`` maps the tensor ``x`` (with ``requires_grad=True``) to a scalar tensor.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    coordinates whose true gradient is zero from dividing by zero.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    x.grad = None
    with Tape() as tape:
        out = f(x)
    value = out.data.item()
    if not np.isfinite(value):
        raise EvaluationError(f"f(x) is not finite: {value}")
    tape.backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    analytic = np.array(analytic, dtype=np.float64)

    flat = x.data.reshape(-1)
    numeric = np.empty(flat.size, dtype=np.float64)
    for k in range(flat.size):
        saved = flat[k]
        flat[k] = saved + h
        fp = f(x).data.item()
        flat[k] = saved - h
        fm = f(x).data.item()
        flat[k] = saved
        numeric[k] = (fp - fm) / (2 * h)
    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    return float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
