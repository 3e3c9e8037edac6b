"""Eye-tracking stream: linear projection + sinusoidal positions + encoder."""

from __future__ import annotations

import numpy as np

from .nn import Linear, Module, TransformerEncoderLayer
from .tensor import ShapeError, Tensor


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed positional code: sin at even columns, cos at odd columns.

    Frequencies fall geometrically from 1 to 1/10000 across column pairs,
    so every entry lies in [-1, 1] and position 0 maps to (0, 1, 0, 1, ...).
    """
    if dim % 2 != 0:
        raise ValueError(f"positional encoding width must be even, got {dim}")
    positions = np.arange(length, dtype=np.float64)[:, None]
    freqs = np.exp(-np.log(10000.0) * np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = positions * freqs[None, :]
    table = np.empty((length, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


class EyeEncoder(Module):
    """(B, M, 6) standardized eye sequences -> (B, M, embed) token features."""

    def __init__(self, embed_dim: int, rng: np.random.Generator,
                 in_dim: int = 6, num_layers: int = 2, heads: int = 2,
                 ff_dim: int | None = None, positional: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.positional = positional
        self.input_proj = Linear(in_dim, embed_dim, rng)
        self.layers = [
            TransformerEncoderLayer(embed_dim, heads, ff_dim or 2 * embed_dim, rng)
            for _ in range(num_layers)
        ]

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 3:
            raise ShapeError(
                f"eye encoder: expected (B,M,{self.in_dim}) input, got {x.data.ndim}-d"
            )
        if x.data.shape[-1] != self.in_dim:
            raise ShapeError(
                f"eye encoder: input width {x.data.shape[-1]} != expected {self.in_dim}"
            )
        h = self.input_proj(x)
        if self.positional:
            h = h + sinusoidal_encoding(x.data.shape[1], h.data.shape[-1])
        for layer in self.layers:
            h = layer(h)
        return h
