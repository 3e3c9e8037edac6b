"""Parameter-holding layers over the functional ops.

Modules track parameters (Tensors with requires_grad) and buffers (plain
arrays such as batch-norm running statistics) by attribute walk, in
construction order, which also fixes the checkpoint record order.
Weights draw from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start
at zero.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor, cat, split


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Base class: parameter/buffer discovery, train/eval state, state I/O."""

    def __init__(self):
        self._training = True

    @property
    def training(self) -> bool:
        return self._training

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m._training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> Iterator[Tensor]:
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, np.ndarray):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        """Parameters then buffers, in discovery order."""
        items = [(name, p.data) for name, p in self.named_parameters()]
        items += list(self.named_buffers())
        return items

    def load_state_items(self, items: list[tuple[str, np.ndarray]]) -> None:
        expected = self.state_items()
        if len(items) != len(expected):
            raise ValueError(
                f"state mismatch: model has {len(expected)} records, got {len(items)}"
            )
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for (name, arr), (want_name, want_arr) in zip(items, expected):
            if name != want_name:
                raise ValueError(f"state mismatch: expected record {want_name!r}, got {name!r}")
            if arr.shape != want_arr.shape:
                raise ValueError(
                    f"state mismatch for {name!r}: shape {arr.shape} != {want_arr.shape}"
                )
            if name in params:
                params[name].data = np.array(arr, dtype=np.float64)
            else:
                np.copyto(buffers[name], arr)

    def snapshot(self) -> list[tuple[str, np.ndarray]]:
        return [(name, arr.copy()) for name, arr in self.state_items()]

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = uniform_fan_in(rng, (in_features, out_features), in_features)
        self.bias = zeros_param(out_features) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel,
                 rng: np.random.Generator, stride=(1, 1), pad=(0, 0)):
        super().__init__()
        kh, kw = F._pair(kernel)
        self.stride = F._pair(stride)
        self.pad = F._pair(pad)
        self.weight = uniform_fan_in(
            rng, (out_channels, in_channels, kh, kw), in_channels * kh * kw)
        self.bias = zeros_param(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = zeros_param(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, self.training,
                              momentum=self.momentum, eps=self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = zeros_param(dim)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.rate, self.training, self._rng)


class LSTM(Module):
    """Stacked LSTM returning the top layer's hidden state at every step.

    Gate layout along the 4H axis is (input, forget, candidate, output);
    initial hidden and cell states are zero.
    """

    def __init__(self, input_size: int, hidden_size: int, num_layers: int,
                 rng: np.random.Generator):
        super().__init__()
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.w_ih = []
        self.w_hh = []
        self.b = []
        for layer in range(num_layers):
            d_in = input_size if layer == 0 else hidden_size
            self.w_ih.append(uniform_fan_in(rng, (d_in, 4 * hidden_size), d_in))
            self.w_hh.append(uniform_fan_in(rng, (hidden_size, 4 * hidden_size), hidden_size))
            self.b.append(zeros_param(4 * hidden_size))

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 3:
            raise ShapeError(f"lstm: input must be 3-d (B,T,D), got {x.data.ndim}-d")
        if not np.isfinite(x.data).all():
            raise ValueError("lstm: input contains non-finite values")
        bsz, steps, _ = x.data.shape
        hid = self.hidden_size
        seq = x
        for layer in range(self.num_layers):
            w_ih, w_hh, b = self.w_ih[layer], self.w_hh[layer], self.b[layer]
            # input contribution for all timesteps in one matmul
            z_in = seq @ w_ih + b
            h = Tensor(np.zeros((bsz, hid)))
            c = Tensor(np.zeros((bsz, hid)))
            outputs = []
            for t in range(steps):
                z = z_in[:, t, :] + h @ w_hh
                gi = z[:, :hid].sigmoid()
                gf = z[:, hid:2 * hid].sigmoid()
                gc = z[:, 2 * hid:3 * hid].tanh()
                go = z[:, 3 * hid:].sigmoid()
                c = gf * c + gi * gc
                h = go * c.tanh()
                outputs.append(h.reshape((bsz, 1, hid)))
            seq = cat(outputs, axis=1)
        return seq


class MultiheadSelfAttention(Module):
    """Scaled dot-product self-attention; keeps the last attention weights."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"embedding width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.d_k = dim // heads
        self.w_q = uniform_fan_in(rng, (dim, dim), dim)
        self.w_k = uniform_fan_in(rng, (dim, dim), dim)
        self.w_v = uniform_fan_in(rng, (dim, dim), dim)
        self.w_o = uniform_fan_in(rng, (dim, dim), dim)
        self.last_attn: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        bsz, steps, dim = x.data.shape

        def heads_view(t: Tensor) -> Tensor:
            return t.reshape((bsz, steps, self.heads, self.d_k)).transpose((0, 2, 1, 3))

        q = heads_view(x @ self.w_q)
        k = heads_view(x @ self.w_k)
        v = heads_view(x @ self.w_v)
        scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_k))
        attn = F.softmax(scores, axis=-1)
        self.last_attn = attn.data
        mixed = (attn @ v).transpose((0, 2, 1, 3)).reshape((bsz, steps, dim))
        return mixed @ self.w_o


class TransformerEncoderLayer(Module):
    """Post-norm encoder block: self-attention + 2-layer ReLU feed-forward."""

    def __init__(self, dim: int, heads: int, ff_dim: int, rng: np.random.Generator):
        super().__init__()
        self.attn = MultiheadSelfAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff_dim, rng)
        self.ff2 = Linear(ff_dim, dim, rng)
        self.norm2 = LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ff2(self.ff1(x).relu()))
