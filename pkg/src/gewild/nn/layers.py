"""Parameters, module tree, and the layers the fusion model is built from."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError, InternalError
from . import tensor as T
from .tensor import Tensor


class Parameter:
    """A named, trainable tensor. Frozen parameters are skipped by the optimizer."""

    __slots__ = ("name", "tensor", "frozen")

    def __init__(self, data: np.ndarray, name: str | None = None):
        self.tensor = Tensor(data, requires_grad=True)
        self.name = name
        self.frozen = False

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.tensor.shape}, frozen={self.frozen})"


class Module:
    """Base class; child modules and parameters are discovered from attributes.

    Attribute order (insertion order) fixes the parameter walk order, which in
    turn fixes checkpoint layout, so it is deterministic by construction.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            path = f"{prefix}.{attr}" if prefix else attr
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}{i}")
                    elif isinstance(item, Parameter):
                        yield f"{path}{i}", item

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.tensor.zero_grad()

    def to_dtype(self, dtype):
        """Cast all parameters in place (float64 for gradient-check shadows)."""
        for p in self.parameters():
            p.tensor.data = p.tensor.data.astype(dtype)
            p.tensor.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.tensor.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise InternalError(f"state dict missing parameter {name}")
            arr = state[name]
            if tuple(arr.shape) != p.tensor.shape:
                raise DimensionError(
                    f"parameter {name}: stored shape {tuple(arr.shape)} "
                    f"!= model shape {p.tensor.shape}"
                )
            p.tensor.data = np.asarray(arr, dtype=p.tensor.data.dtype).copy()
            p.tensor.grad = None


def bind_parameter_names(root: Module, prefix: str = "") -> None:
    """Stamp dotted path names onto every parameter; names must be unique."""
    seen = set()
    for name, p in root.named_parameters(prefix):
        if name in seen:
            raise InternalError(f"duplicate parameter name {name}")
        seen.add(name)
        p.name = name


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (d_in + d_out))
        self.weight = Parameter(
            rng.uniform(-limit, limit, size=(d_in, d_out)).astype(np.float32)
        )
        self.bias = Parameter(np.zeros(d_out, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight.tensor) + self.bias.tensor


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        std = np.sqrt(2.0 / (c_in * k * k))
        self.weight = Parameter(
            (rng.standard_normal((c_out, c_in, k, k)) * std).astype(np.float32)
        )
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight.tensor, self.bias.tensor,
                        stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim, dtype=np.float32))
        self.beta = Parameter(np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma.tensor, self.beta.tensor, eps=self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with learned Q/K/V/output projections.

    After each forward, `last_weights` holds the (batch, heads, Tq, Tk)
    attention matrix so callers can assert normalization properties.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads != 0:
            raise ConfigError(f"model width {d} not divisible by {heads} heads")
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.heads = heads
        self.d = d
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor, batch: int, length: int) -> Tensor:
        dh = self.d // self.heads
        return T.transpose(T.reshape(x, (batch, length, self.heads, dh)), (0, 2, 1, 3))

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        if q.shape[-1] != self.d or k.shape[-1] != self.d or v.shape[-1] != self.d:
            raise DimensionError(
                f"attention width mismatch: q {q.shape}, k {k.shape}, v {v.shape}, "
                f"expected last dim {self.d}"
            )
        if k.shape[1] != v.shape[1]:
            raise DimensionError(
                f"key length {k.shape[1]} != value length {v.shape[1]}"
            )
        batch, tq = q.shape[0], q.shape[1]
        tk = k.shape[1]
        dh = self.d // self.heads
        qh = self._split(self.wq(q), batch, tq)
        kh = self._split(self.wk(k), batch, tk)
        vh = self._split(self.wv(v), batch, tk)
        scores = T.matmul(qh, T.swapaxes(kh, -1, -2)) * (1.0 / np.sqrt(dh))
        attn = T.softmax(scores, axis=-1)
        self.last_weights = attn.data.copy()
        ctx = T.matmul(attn, vh)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (batch, tq, self.d))
        return self.wo(merged)


class TransformerEncoderLayer(Module):
    """Post-norm encoder layer: self-attention and a 2x-wide feed-forward."""

    def __init__(self, d: int, heads: int, ff_dim: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln1 = LayerNorm(d)
        self.ff1 = Linear(d, ff_dim, rng)
        self.ff2 = Linear(ff_dim, d, rng)
        self.ln2 = LayerNorm(d)

    def forward(self, x: Tensor) -> Tensor:
        x = self.ln1(x + self.attn(x, x, x))
        x = self.ln2(x + self.ff2(T.gelu(self.ff1(x))))
        return x


class PreNormTransformerBlock(Module):
    """Pre-norm block as used in patch-token image transformers."""

    def __init__(self, d: int, heads: int, mlp_dim: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.mlp1 = Linear(d, mlp_dim, rng)
        self.mlp2 = Linear(mlp_dim, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, h)
        x = x + self.mlp2(T.gelu(self.mlp1(self.ln2(x))))
        return x


def sinusoidal_positional_encoding(length: int, d: int) -> np.ndarray:
    """Fixed sin/cos position table: sin on even dims, cos on odd dims."""
    if d % 2 != 0:
        raise ConfigError(f"positional encoding width must be even, got {d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.empty((length, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(np.float32)
