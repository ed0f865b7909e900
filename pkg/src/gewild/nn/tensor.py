"""Reverse-mode autodiff over flat numpy buffers.

Tensors hold row-major float32 data (float64 is allowed so test oracles can
run the same graph in double precision). Every differentiable op appends one
entry to a thread-local tape; `backward` replays the tape in exact reverse
recording order and then clears it. One backward call consumes one tape.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, DataError

_STATE = threading.local()

# im2col scratch matrices are processed in batch chunks no larger than this
_COL_BUDGET_BYTES = 128 * 1024 * 1024


def _tape() -> list:
    tape = getattr(_STATE, "tape", None)
    if tape is None:
        tape = []
        _STATE.tape = tape
    return tape


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording (inference / oracle evaluation)."""
    prev = _grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


class _Recorded:
    """One tape entry: an op output, its parents, and the vector-Jacobian product."""

    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tensor:
    """n-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Seed this tensor's grad and replay the active tape in reverse."""
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}"
            )
        self.grad = grad
        tape = _tape()
        for rec in reversed(tape):
            g = rec.out.grad
            if g is None:
                continue
            for parent, pg in zip(rec.parents, rec.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg.astype(parent.data.dtype, copy=True)
                else:
                    parent.grad = parent.grad + pg
        # non-contributing tracked tensors hold a correct zero gradient
        for rec in tape:
            for t in (rec.out, *rec.parents):
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)
        tape.clear()

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), dtype=dtype)


def _record(out: Tensor, parents: tuple, vjp) -> Tensor:
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _tape().append(_Recorded(out, parents, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, dtype=(a.data + b.data).dtype)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, dtype=(a.data - b.data).dtype)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, dtype=(a.data * b.data).dtype)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), vjp)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape), dtype=x.dtype)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), vjp)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.transpose(axes), dtype=x.dtype)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _record(out, (x,), vjp)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def take(x: Tensor, idx) -> Tensor:
    """Basic indexing (ints/slices); gradient scatters back into place."""
    out = Tensor(x.data[idx].copy(), dtype=x.dtype)

    def vjp(g):
        dx = np.zeros_like(x.data)
        dx[idx] += g
        return (dx,)

    return _record(out, (x,), vjp)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 dtype=tensors[0].dtype)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), vjp)


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(np.broadcast_to(x.data, shape).copy(), dtype=x.dtype)

    def vjp(g):
        return (_unbroadcast(g, x.shape),)

    return _record(out, (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.dtype)
    count = x.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / count,)

    return _record(out, (x,), vjp)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def vjp(g):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# activations / normalization


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), dtype=x.dtype)
    mask = x.data > 0

    def vjp(g):
        return (g * mask,)

    return _record(out, (x,), vjp)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    u = _GELU_C * (x.data + _GELU_A * x.data**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t), dtype=x.dtype)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du),)

    return _record(out, (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, dtype=x.dtype)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dim, then apply the learned affine."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} "
            f"do not match feature dim {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data, dtype=x.dtype)

    def vjp(g):
        dxhat = g * gamma.data
        dgamma = (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0)
        dbeta = g.reshape(-1, x.shape[-1]).sum(axis=0)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product (.., M, K) @ (.., K, N)."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dims do not match: {a.shape} x {b.shape}"
        )
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(
            f"matmul batch dims not broadcastable: {a.shape} x {b.shape}"
        ) from exc
    out = Tensor(data, dtype=data.dtype)

    def vjp(g):
        da = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        db = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return da, db

    return _record(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# convolution / pooling


def _batch_chunks(n_batch: int, per_item: int):
    step = max(1, _COL_BUDGET_BYTES // max(per_item, 1))
    for lo in range(0, n_batch, step):
        yield lo, min(lo + step, n_batch)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B*Ho*Wo, C*kh*kw) patch matrix."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, float matmul inner loop."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/kernel, got {x.shape}/{w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise DimensionError(f"conv2d channels mismatch: input {C}, kernel {Cw}")
    hp, wp = H + 2 * padding, W + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})"
        )
    if bias is not None and bias.shape != (O,):
        raise DimensionError(f"conv2d bias shape {bias.shape}, expected ({O},)")

    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wmat = w.data.reshape(O, C * kh * kw).T

    itemsize = x.data.dtype.itemsize
    out_data = np.empty((B, O, ho, wo), dtype=x.dtype)
    per_item = ho * wo * C * kh * kw * itemsize
    for lo, hi in _batch_chunks(B, per_item):
        cols = _im2col(xp[lo:hi], kh, kw, stride)
        res = cols @ wmat  # (chunk*ho*wo, O)
        out_data[lo:hi] = res.reshape(hi - lo, ho, wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data += bias.data.reshape(1, O, 1, 1)
    out = Tensor(out_data, dtype=out_data.dtype)

    parents = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        dw = np.zeros((C * kh * kw, O), dtype=g.dtype)
        need_dx = x.requires_grad
        dx = np.zeros_like(x.data) if need_dx else None

        # grad wrt kernel: same im2col patches against the output grad
        for lo, hi in _batch_chunks(B, per_item):
            cols = _im2col(xp[lo:hi], kh, kw, stride)
            gmat = g[lo:hi].transpose(0, 2, 3, 1).reshape(-1, O)
            dw += cols.T @ gmat
        dw = dw.T.reshape(O, C, kh, kw)

        if need_dx:
            # grad wrt input: correlate the stride-dilated output grad with
            # the flipped kernel (full padding), which is again one matmul
            hd, wd = (ho - 1) * stride + 1, (wo - 1) * stride + 1
            hv, wv = hd + kh - 1, wd + kw - 1  # <= hp, wp
            wflip = w.data[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(O * kh * kw, C)
            per_item_b = hv * wv * O * kh * kw * itemsize
            for lo, hi in _batch_chunks(B, per_item_b):
                gd = np.zeros((hi - lo, O, hd + 2 * (kh - 1), wd + 2 * (kw - 1)),
                              dtype=g.dtype)
                gd[:, :, kh - 1:kh - 1 + hd:1, kw - 1:kw - 1 + wd:1][:, :, ::stride, ::stride] \
                    = g[lo:hi]
                colsg = _im2col(gd, kh, kw, 1)
                dxv = (colsg @ wflip).reshape(hi - lo, hv, wv, C).transpose(0, 3, 1, 2)
                dxp = np.zeros((hi - lo, C, hp, wp), dtype=g.dtype)
                dxp[:, :, :hv, :wv] = dxv
                if padding:
                    dx[lo:hi] = dxp[:, :, padding:padding + H, padding:padding + W]
                else:
                    dx[lo:hi] = dxp

        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _record(out, parents, vjp)


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Window maxima; gradient routes to the first argmax per window."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects 4-D input, got {x.shape}")
    B, C, H, W = x.shape
    if H < k or W < k:
        raise DimensionError(f"pool window {k} larger than input {H}x{W}")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    flat = win.reshape(b, c, ho, wo, k * k)
    idx = flat.argmax(axis=-1)  # first occurrence on ties
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0],
                 dtype=x.dtype)

    def vjp(g):
        bi, ci, hi_, wi = np.ogrid[:b, :c, :ho, :wo]
        rows = hi_ * stride + idx // k
        cols = wi * stride + idx % k
        dx = np.zeros_like(x.data)
        if stride >= k:  # windows disjoint: plain fancy assignment
            dx[np.broadcast_to(bi, idx.shape), np.broadcast_to(ci, idx.shape),
               rows, cols] = g
        else:
            np.add.at(dx, (np.broadcast_to(bi, idx.shape),
                           np.broadcast_to(ci, idx.shape), rows, cols), g)
        return (dx,)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# loss


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood with a fused, shifted log-softmax."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (batch, classes), got {logits.shape}")
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape}, expected ({n},)")
    if labels.min() < 0 or labels.max() >= n_classes:
        bad = int(np.argmax((labels < 0) | (labels >= n_classes)))
        raise DataError(
            f"label {labels[bad]} at record {bad} outside [0, {n_classes})"
        )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(n), labels].mean()
    out = Tensor(np.asarray(loss, dtype=logits.dtype), dtype=logits.dtype)

    probs = np.exp(log_probs)

    def vjp(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (d * (g / n),)

    return _record(out, (logits,), vjp)
