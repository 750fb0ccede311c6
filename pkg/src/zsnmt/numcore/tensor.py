"""Dense arrays with a tape-based reverse-mode autodiff.

A :class:`Tape` used as a context manager records every op whose inputs
require gradients; :meth:`Tape.backward` replays the record in reverse.
Outside a tape, ops are plain numpy evaluations, which is what inference
and validation use.
"""

import numpy as np

from ._backend import kernels

DEFAULT_DTYPE = np.float32
NEG_LARGE = -1e30


class DimensionError(ValueError):
    pass


class EvaluationError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


_TAPES = []


class Tape:
    """Single-writer record of differentiable ops."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, backward_fn):
        self._nodes.append(backward_fn)

    def backward(self, loss):
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._nodes):
            fn()


def _tape_for(*inputs):
    if not _TAPES:
        return None
    if any(t.requires_grad for t in inputs):
        return _TAPES[-1]
    return None


def _accum(t, g, owned=False):
    # owned: g is a fresh array nobody else holds, so it can become t.grad as is
    if not t.requires_grad:
        return
    if t.grad is None:
        if owned and g.dtype == t.data.dtype and g.shape == t.data.shape:
            t.grad = g
        else:
            t.grad = np.array(np.broadcast_to(g, t.data.shape), dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _out(data, tape):
    return Tensor(data, requires_grad=tape is not None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def matmul(a, b):
    """Matrix product; ``a`` may carry leading batch axes, ``b`` may be 2-D or batched alike."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if b.data.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} x {b.shape}")
    tape = _tape_for(a, b)
    flat = b.data.ndim == 2 and a.data.ndim > 2
    if flat:
        # one gemm instead of numpy's loop over leading axes
        k, n = b.shape
        y = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,))
    else:
        y = a.data @ b.data
    out = _out(y, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            if flat:
                g2 = g.reshape(-1, n)
                if a.requires_grad:
                    _accum(a, (g2 @ b.data.T).reshape(a.shape), owned=True)
                if b.requires_grad:
                    _accum(b, a.data.reshape(-1, k).T @ g2, owned=True)
                return
            if a.requires_grad:
                _accum(a, g @ np.swapaxes(b.data, -1, -2), owned=True)
            if b.requires_grad:
                _accum(b, np.swapaxes(a.data, -1, -2) @ g, owned=True)

        tape.record(backward)
    return out


def add(a, b):
    """Elementwise sum; ``b`` may broadcast over leading axes of ``a`` (bias)."""
    if b.data.ndim > a.data.ndim or a.shape[a.data.ndim - b.data.ndim :] != b.shape:
        if a.shape != b.shape:
            raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    tape = _tape_for(a, b)
    out = _out(a.data + b.data, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            _accum(a, g)
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.shape))

        tape.record(backward)
    return out


def mul(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    tape = _tape_for(a, b)
    out = _out(a.data * b.data, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g * b.data, owned=True)
            if b.requires_grad:
                _accum(b, g * a.data, owned=True)

        tape.record(backward)
    return out


def tanh(x):
    tape = _tape_for(x)
    y = np.tanh(x.data)
    out = _out(y, tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _accum(x, out.grad * (1 - y * y), owned=True)

        tape.record(backward)
    return out


def sigmoid(x):
    tape = _tape_for(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = _out(y, tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _accum(x, out.grad * y * (1 - y), owned=True)

        tape.record(backward)
    return out


def total(x):
    """Sum of all entries as a scalar tensor."""
    tape = _tape_for(x)
    out = _out(np.asarray(x.data.sum(), dtype=x.dtype), tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _accum(x, np.broadcast_to(out.grad, x.shape))

        tape.record(backward)
    return out


def scale(x, factor):
    tape = _tape_for(x)
    out = _out(x.data * x.dtype.type(factor), tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _accum(x, out.grad * x.dtype.type(factor), owned=True)

        tape.record(backward)
    return out


def concat(tensors, axis=-1):
    tape = _tape_for(*tensors)
    out = _out(np.concatenate([t.data for t in tensors], axis=axis), tape)
    if tape is not None:
        sizes = [t.shape[axis] for t in tensors]
        cuts = np.cumsum(sizes)[:-1]

        def backward():
            if out.grad is None:
                return
            for t, g in zip(tensors, np.split(out.grad, cuts, axis=axis)):
                _accum(t, g)

        tape.record(backward)
    return out


def reshape(x, shape):
    tape = _tape_for(x)
    out = _out(x.data.reshape(shape), tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _accum(x, out.grad.reshape(x.shape))

        tape.record(backward)
    return out


def transpose(x, axes):
    tape = _tape_for(x)
    out = _out(np.ascontiguousarray(np.transpose(x.data, axes)), tape)
    if tape is not None:
        inverse = np.argsort(axes)

        def backward():
            if out.grad is not None:
                _accum(x, np.ascontiguousarray(np.transpose(out.grad, inverse)), owned=True)

        tape.record(backward)
    return out


def embedding(table, ids):
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = ids[(ids < 0) | (ids >= V)][0]
        raise IndexError(f"token id {int(bad)} out of range for vocabulary of size {V}")
    tape = _tape_for(table)
    out = _out(table.data[ids], tape)
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(table.data)
            np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.shape[1]))
            _accum(table, g, owned=True)

        tape.record(backward)
    return out


def dropout(x, p, rng, train):
    """Inverted dropout: identity unless ``train`` and ``p > 0``."""
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    tape = _tape_for(x)
    out = _out(x.data * keep, tape)
    if tape is not None:

        def backward():
            if out.grad is not None:
                _accum(x, out.grad * keep, owned=True)

        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# distributions and losses


def softmax_array(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_array(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(x):
    """Softmax over the last axis, max-shifted for stability."""
    if x.data.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax needs at least one entry, got shape {x.shape}")
    tape = _tape_for(x)
    y = softmax_array(x.data)
    out = _out(y, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is not None:
                _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)), owned=True)

        tape.record(backward)
    return out


def log_softmax(x):
    tape = _tape_for(x)
    y = log_softmax_array(x.data)
    out = _out(y, tape)
    if tape is not None:

        def backward():
            g = out.grad
            if g is not None:
                _accum(x, g - np.exp(y) * g.sum(axis=-1, keepdims=True), owned=True)

        tape.record(backward)
    return out


def cross_entropy(logits, target, mask=None):
    """Mean of ``-log softmax(logits)[target]`` over (masked) positions.

    ``logits`` has shape ``(..., n)`` and ``target`` the leading shape.
    Returns a scalar tensor.
    """
    target = np.asarray(target, dtype=np.int64)
    n = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise DimensionError(f"target shape {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= n):
        raise IndexError(f"target class out of range [0, {n})")
    flat = logits.data.reshape(-1, n)
    t = target.reshape(-1)
    if mask is None:
        w = np.ones(t.shape, dtype=logits.dtype)
    else:
        w = np.asarray(mask, dtype=logits.dtype).reshape(-1)
    count = w.sum()
    if count <= 0:
        raise DimensionError("cross_entropy over an empty selection")
    logp = log_softmax_array(flat)
    picked = logp[np.arange(t.size), t]
    loss = -(picked * w).sum() / count
    tape = _tape_for(logits)
    out = _out(np.asarray(loss, dtype=logits.dtype), tape)
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            g = np.exp(logp)
            g[np.arange(t.size), t] -= 1
            g *= (w / count * out.grad)[:, None]
            _accum(logits, g.reshape(logits.shape), owned=True)

        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# fused recurrent and attention primitives


def lstm(xw, w_h, h0, c0, mask, reverse=False):
    """One LSTM layer over time-major input projections ``xw`` (T, B, 4H).

    ``mask`` (T, B) marks real positions; padded steps carry the state.
    Returns ``(outputs, h_last, c_last)``.
    """
    T, B, G = xw.shape
    if G % 4 or w_h.shape != (G // 4, G) or h0.shape != (B, G // 4) or c0.shape != (B, G // 4):
        raise DimensionError(
            f"lstm shapes inconsistent: xw {xw.shape}, w_h {w_h.shape}, h0 {h0.shape}, c0 {c0.shape}"
        )
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    hs, cs, gates, tcs = kernels.lstm_forward(xw.data, w_h.data, h0.data, c0.data, mask, reverse)
    last = 0 if reverse else T - 1
    tape = _tape_for(xw, w_h, h0, c0)
    out = _out(hs, tape)
    h_last = _out(hs[last].copy(), tape)
    c_last = _out(cs[last].copy(), tape)
    if tape is not None:

        def backward():
            if out.grad is None and h_last.grad is None and c_last.grad is None:
                return
            dhs = out.grad if out.grad is not None else np.zeros_like(hs)
            dh = h_last.grad if h_last.grad is not None else np.zeros_like(h0.data)
            dc = c_last.grad if c_last.grad is not None else np.zeros_like(c0.data)
            dxw, dw_h, dh0, dc0 = kernels.lstm_backward(
                dhs, dh, dc, w_h.data, h0.data, c0.data, mask, hs, cs, gates, tcs, reverse
            )
            _accum(xw, dxw, owned=True)
            _accum(w_h, dw_h, owned=True)
            _accum(h0, dh0, owned=True)
            _accum(c0, dc0, owned=True)

        tape.record(backward)
    return out, h_last, c_last


def attention_arrays(query, keys, w, key_mask):
    """Bilinear (general) attention on raw arrays; returns ``(context, weights, projected_query)``."""
    q = query @ w
    scores = q @ np.swapaxes(keys, -1, -2)
    if key_mask is not None:
        scores = np.where(key_mask[..., None, :], scores, scores.dtype.type(NEG_LARGE))
    weights = softmax_array(scores)
    return weights @ keys, weights, q


def attention(query, keys, w, key_mask=None):
    """``weights = softmax(query W keys^T)``, ``context = weights keys``.

    ``query`` (B, T, H), ``keys`` (B, S, H), ``w`` (H, H), ``key_mask`` (B, S) bool.
    """
    if query.data.ndim != 3 or keys.data.ndim != 3 or query.shape[0] != keys.shape[0]:
        raise DimensionError(f"attention expects (B,T,H) and (B,S,H), got {query.shape}, {keys.shape}")
    if w.shape != (query.shape[-1], keys.shape[-1]):
        raise DimensionError(f"attention weight shape {w.shape} incompatible with {query.shape}, {keys.shape}")
    km = None if key_mask is None else np.asarray(key_mask, dtype=bool)
    ctx, weights, q = attention_arrays(query.data, keys.data, w.data, km)
    tape = _tape_for(query, keys, w)
    context = _out(ctx, tape)
    probs = _out(weights, tape)
    if tape is not None:

        def backward():
            if context.grad is None and probs.grad is None:
                return
            dctx = context.grad if context.grad is not None else np.zeros_like(ctx)
            dA = dctx @ np.swapaxes(keys.data, -1, -2)
            if probs.grad is not None:
                dA = dA + probs.grad
            dkeys = np.swapaxes(weights, -1, -2) @ dctx
            dscores = weights * (dA - (dA * weights).sum(axis=-1, keepdims=True))
            dq = dscores @ keys.data
            dkeys = dkeys + np.swapaxes(dscores, -1, -2) @ q
            H = query.shape[-1]
            if w.requires_grad:
                _accum(w, query.data.reshape(-1, H).T @ dq.reshape(-1, dq.shape[-1]), owned=True)
            if query.requires_grad:
                _accum(query, dq @ w.data.T, owned=True)
            _accum(keys, dkeys, owned=True)

        tape.record(backward)
    return context, probs
