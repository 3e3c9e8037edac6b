"""Facial stream: per-frame CNN, directional convolution block, 2-layer LSTM.

Frames share conv weights and run as one flattened batch.  The backbone
is conv 7x7/s2 -> BN -> ReLU -> maxpool 2x2/s2, then four 3x3 convs
(strides 2,2,2,1, pad 1), each with BN+ReLU; a 224x224 input lands at a
128x7x7 map, a 32x32 desk-scale input at 128x1x1.  The directional block
splits channels in half, runs two stacked 1x3 convs on one half and two
stacked 3x1 convs on the other (BN+ReLU after each), concatenates the
halves back and adds the block input as a residual.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .nn import BatchNorm2d, Conv2d, Linear, LSTM, Module
from .tensor import ShapeError, Tensor, cat, split

DEFAULT_CHANNEL_PLAN = (32, 64, 64, 128, 128)


class DirectionalConvBlock(Module):
    """Dual-branch horizontal/vertical convolutions with a residual add."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        if channels % 2 != 0:
            raise ValueError(
                f"directional block needs an even channel count, got {channels}"
            )
        half = channels // 2
        self.h_conv1 = Conv2d(half, half, (1, 3), rng, pad=(0, 1))
        self.h_bn1 = BatchNorm2d(half)
        self.h_conv2 = Conv2d(half, half, (1, 3), rng, pad=(0, 1))
        self.h_bn2 = BatchNorm2d(half)
        self.v_conv1 = Conv2d(half, half, (3, 1), rng, pad=(1, 0))
        self.v_bn1 = BatchNorm2d(half)
        self.v_conv2 = Conv2d(half, half, (3, 1), rng, pad=(1, 0))
        self.v_bn2 = BatchNorm2d(half)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.shape[1] % 2 != 0:
            raise ShapeError(
                f"directional block: odd channel count {x.data.shape[1]}"
            )
        s1, s2 = split(x, 2, axis=1)
        h = self.h_bn1(self.h_conv1(s1)).relu()
        h = self.h_bn2(self.h_conv2(h)).relu()
        v = self.v_bn1(self.v_conv1(s2)).relu()
        v = self.v_bn2(self.v_conv2(v)).relu()
        return x + cat([h, v], axis=1)


class SingleConvBlock(Module):
    """One k x k conv (same padding) + BN + ReLU; matched in/out channels."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError(f"single conv block needs an odd kernel, got {kernel}")
        p = kernel // 2
        self.conv = Conv2d(channels, channels, (kernel, kernel), rng, pad=(p, p))
        self.bn = BatchNorm2d(channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x)).relu()


def make_direction_module(kind: str | None, channels: int,
                          rng: np.random.Generator) -> Module | None:
    if kind is None or kind == "none":
        return None
    if kind == "dacm":
        return DirectionalConvBlock(channels, rng)
    if kind == "conv3x3":
        return SingleConvBlock(channels, 3, rng)
    if kind == "conv5x5":
        return SingleConvBlock(channels, 5, rng)
    raise ValueError(f"unknown direction module kind {kind!r}")


class FrameEncoder(Module):
    """(B, F, C, H, W) frame sequences -> (B, F, embed) feature sequences."""

    # (kernel, stride, pad) per conv layer; pool follows the first conv
    _PLAN = ((7, 2, 3), (3, 2, 1), (3, 2, 1), (3, 2, 1), (3, 1, 1))

    def __init__(self, embed_dim: int, rng: np.random.Generator,
                 in_channels: int = 3,
                 channels: tuple[int, ...] = DEFAULT_CHANNEL_PLAN,
                 direction: str | None = "dacm"):
        super().__init__()
        if len(channels) != len(self._PLAN):
            raise ValueError(f"channel plan must list {len(self._PLAN)} layers")
        self.channels = tuple(channels)
        self.convs = []
        self.bns = []
        prev = in_channels
        for ch, (k, s, p) in zip(channels, self._PLAN):
            self.convs.append(Conv2d(prev, ch, (k, k), rng, stride=(s, s), pad=(p, p)))
            self.bns.append(BatchNorm2d(ch))
            prev = ch
        self.direction = make_direction_module(direction, prev, rng)
        self.proj = Linear(prev, embed_dim, rng) if prev != embed_dim else None
        self.lstm = LSTM(embed_dim, embed_dim, 2, rng)
        self.direction_out: Tensor | None = None

    def _check_plan(self, h: int, w: int) -> None:
        names = ["conv1 (7x7, stride 2)", "maxpool (2x2, stride 2)",
                 "conv2 (3x3, stride 2)", "conv3 (3x3, stride 2)",
                 "conv4 (3x3, stride 2)", "conv5 (3x3, stride 1)"]
        steps = [(7, 2, 3), (2, 2, 0), (3, 2, 1), (3, 2, 1), (3, 2, 1), (3, 1, 1)]
        for name, (k, s, p) in zip(names, steps):
            nh = F.conv_output_size(h, k, s, p)
            nw = F.conv_output_size(w, k, s, p)
            if nh < 1 or nw < 1:
                raise ShapeError(
                    f"facial encoder: {name} would produce an empty output "
                    f"from a {h}x{w} input"
                )
            h, w = nh, nw

    def forward(self, frames: Tensor) -> Tensor:
        if frames.data.ndim != 5:
            raise ShapeError(
                f"facial encoder: expected (B,F,C,H,W) frames, got {frames.data.ndim}-d"
            )
        b, f, c, h, w = frames.data.shape
        self._check_plan(h, w)
        x = frames.reshape((b * f, c, h, w))
        x = self.bns[0](self.convs[0](x)).relu()
        x = F.max_pool2d(x, kernel=(2, 2))
        for conv, bn in zip(self.convs[1:], self.bns[1:]):
            x = bn(conv(x)).relu()
        if self.direction is not None:
            x = self.direction(x)
            self.direction_out = x
        else:
            self.direction_out = None
        feats = F.global_avg_pool(x)
        if self.proj is not None:
            feats = self.proj(feats)
        seq = feats.reshape((b, f, feats.data.shape[-1]))
        return self.lstm(seq)
