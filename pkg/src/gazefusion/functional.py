"""Neural-network operations on top of the tensor engine.

Convolution runs as im2col + one BLAS matmul per batch chunk.  The column
matrix is cached for backward while it stays small; past a memory
threshold it is rebuilt chunk by chunk instead (same numbers, bounded
memory for full-resolution 224x224 inputs).
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _accum, _accum_owned, _from_op, lift

# above this many bytes the conv column matrix is recomputed in backward
_COLS_CACHE_LIMIT = 256 * 1024 * 1024


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(dcols: np.ndarray, xp_shape, kh: int, kw: int, sh: int, sw: int,
            oh: int, ow: int) -> np.ndarray:
    b, c = xp_shape[:2]
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    dc = dcols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += dc[:, :, i, j]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=(1, 1), pad=(0, 0)) -> Tensor:
    """2-D cross-correlation with zero padding.

    x: (B, Cin, H, W); weight: (Cout, Cin, kh, kw); bias: (Cout,) or None.
    Output spatial size is floor((dim + 2*pad - kernel)/stride) + 1.
    """
    x, weight = lift(x), lift(weight)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-d (B,C,H,W), got {x.data.ndim}-d")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-d (Cout,Cin,kh,kw), got {weight.data.ndim}-d")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    if sh < 1 or sw < 1:
        raise ShapeError(f"conv2d: stride must be positive, got ({sh},{sw})")
    if ph < 0 or pw < 0:
        raise ShapeError(f"conv2d: padding must be nonnegative, got ({ph},{pw})")
    b, cin, h, w = x.data.shape
    cout, wcin, kh, kw = weight.data.shape
    if cin != wcin:
        raise ShapeError(
            f"conv2d: input has {cin} channels but weight expects {wcin} "
            "(dimension 1 of input vs dimension 1 of weight)"
        )
    if h + 2 * ph < kh:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded input height {h + 2 * ph}")
    if w + 2 * pw < kw:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded input width {w + 2 * pw}")
    if bias is not None:
        bias = lift(bias)
        if bias.data.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({cout},)")

    oh = conv_output_size(h, kh, sh, ph)
    ow = conv_output_size(w, kw, sw, pw)
    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = x.data
    k = cin * kh * kw
    w2 = weight.data.reshape(cout, k)

    cols_bytes = b * k * oh * ow * 8
    chunk = b if cols_bytes <= _COLS_CACHE_LIMIT else max(
        1, _COLS_CACHE_LIMIT // max(1, k * oh * ow * 8))
    out_data = np.empty((b, cout, oh, ow), dtype=x.data.dtype)
    cached_cols = None
    for s in range(0, b, chunk):
        e = min(b, s + chunk)
        cols = _im2col(xp[s:e], kh, kw, sh, sw, oh, ow)
        out_data[s:e] = np.matmul(w2, cols).reshape(e - s, cout, oh, ow)
        if chunk >= b:
            cached_cols = cols
    if bias is not None:
        out_data += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _from_op(out_data, parents, "conv2d")
    if out.requires_grad:
        def backward():
            g = out.grad
            if bias is not None:
                _accum_owned(bias, g.sum(axis=(0, 2, 3)))
            g2 = g.reshape(b, cout, oh * ow)
            dw2 = np.zeros_like(w2)
            dxp = np.zeros_like(xp) if x.requires_grad else None
            for s in range(0, b, chunk):
                e = min(b, s + chunk)
                cols = cached_cols if cached_cols is not None else _im2col(
                    xp[s:e], kh, kw, sh, sw, oh, ow)
                gc = g2[s:e]
                dw2 += np.tensordot(gc, cols, axes=([0, 2], [0, 2]))
                if dxp is not None:
                    dcols = np.matmul(w2.T, gc)
                    dxp[s:e] = _col2im(dcols, xp[s:e].shape, kh, kw, sh, sw, oh, ow)
            _accum_owned(weight, dw2.reshape(weight.data.shape))
            if dxp is not None:
                if ph or pw:
                    dxp = np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + w])
                _accum_owned(x, dxp)
        out._backward = backward
    return out


def max_pool2d(x: Tensor, kernel=(2, 2), stride=None) -> Tensor:
    """Max pooling; trailing rows/columns that do not fill a window are dropped."""
    x = lift(x)
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d: input must be 4-d, got {x.data.ndim}-d")
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    b, c, h, w = x.data.shape
    if h < kh or w < kw:
        raise ShapeError(f"max_pool2d: window ({kh},{kw}) exceeds input ({h},{w})")
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    windows = np.empty((b, c, kh * kw, oh, ow), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            windows[:, :, i * kw + j] = x.data[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    argm = np.argmax(windows, axis=2)
    out = _from_op(np.max(windows, axis=2), (x,), "max_pool2d")
    if out.requires_grad:
        def backward():
            g = out.grad
            dx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    mask = argm == (i * kw + j)
                    dx[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += g * mask
            _accum_owned(x, dx)
        out._backward = backward
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias, with weight of shape (in_features, out_features)."""
    x, weight = lift(x), lift(weight)
    if x.data.shape[-1] != weight.data.shape[0]:
        raise ShapeError(
            f"linear: input width {x.data.shape[-1]} != weight rows {weight.data.shape[0]}"
        )
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = lift(x)
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"softmax: axis {axis} out of range for {nd}-d tensor")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _from_op(y, (x,), "softmax")
    if out.requires_grad:
        def backward():
            g = out.grad
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accum_owned(x, y * (g - dot))
        out._backward = backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = lift(x), lift(gamma), lift(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine parameters must have shape ({d},), "
            f"got {gamma.data.shape} and {beta.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _from_op(gamma.data * xhat + beta.data, (x, gamma, beta), "layer_norm")
    if out.requires_grad:
        def backward():
            g = out.grad
            _accum_owned(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
            _accum_owned(beta, g.reshape(-1, d).sum(axis=0))
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum_owned(x, inv * (dxhat - m1 - xhat * m2))
        out._backward = backward
    return out


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (B, H, W).

    Train mode normalizes with batch statistics and updates the running
    buffers in place (unbiased variance, torch-style momentum).  Eval mode
    normalizes with the running statistics.
    """
    x, gamma, beta = lift(x), lift(gamma), lift(beta)
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm2d: input must be 4-d, got {x.data.ndim}-d")
    c = x.data.shape[1]
    if gamma.data.shape != (c,):
        raise ShapeError(f"batch_norm2d: gamma shape {gamma.data.shape} != ({c},)")
    g4 = gamma.reshape((1, c, 1, 1))
    b4 = beta.reshape((1, c, 1, 1))
    if training:
        n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        if n < 2:
            raise ValueError("batch_norm2d: training mode needs more than one value per channel")
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        xhat = xc / (var + eps).sqrt()
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.ravel()
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.ravel() * n / (n - 1)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    return g4 * xhat + b4


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales by 1/(1-rate) at train time, identity in eval."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    x = lift(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode requires a random generator")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = _from_op(x.data * mask, (x,), "dropout")
    if out.requires_grad:
        out._backward = lambda: _accum_owned(x, out.grad * mask)
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer class labels."""
    logits = lift(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-d, got {logits.data.ndim}-d")
    labels = np.asarray(labels)
    b, c = logits.data.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"cross_entropy: labels must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    out = _from_op(np.asarray(-logp[rows, labels].mean()), (logits,), "cross_entropy")
    if out.requires_grad:
        def backward():
            p = np.exp(logp)
            p[rows, labels] -= 1.0
            _accum_owned(logits, p * (out.grad / b))
        out._backward = backward
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C) spatial mean."""
    x = lift(x)
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: input must be 4-d, got {x.data.ndim}-d")
    return x.mean(axis=(2, 3))


def global_max_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C) spatial max."""
    x = lift(x)
    if x.data.ndim != 4:
        raise ShapeError(f"global_max_pool: input must be 4-d, got {x.data.ndim}-d")
    return x.max(axis=3).max(axis=2)
