"""Differentiable image ops: convolutions, pooling, resampling.

All ops work on single images shaped [channels, height, width]; there
is no batch axis (batching happens by gradient accumulation in the
train loop).  Learned layers use zero padding; the fixed-function
resamplers (bicubic) use reflect borders.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .autodiff import Tensor, from_op
from .errors import AutodiffError, NonDivisibleError, ShapeMismatchError


def _require(cond: bool, message: str, kind=ShapeMismatchError):
    if not cond:
        raise kind(message)


def _im2col(data: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    # [C,H,W] -> [C*kh*kw, H_out*W_out] with zero padding
    c, h, w = data.shape
    padded = np.pad(data, ((0, 0), (pad, pad), (pad, pad)))
    h_out = h + 2 * pad - kh + 1
    w_out = w + 2 * pad - kw + 1
    view = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    return (
        view.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, h_out * w_out),
        h_out,
        w_out,
    )


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, pad: int = 0) -> Tensor:
    """Cross-correlation of [C,H,W] with [O,C,kh,kw] kernels plus bias [O]."""
    _require(x.data.ndim == 3, "conv2d input must be [C,H,W]")
    _require(w.data.ndim == 4, "conv2d kernel must be [O,C,kh,kw]")
    o, cin, kh, kw = w.shape
    _require(kh % 2 == 1 and kw % 2 == 1, "conv2d kernels must have odd size")
    _require(
        cin == x.shape[0],
        f"conv2d channel mismatch: input {x.shape[0]}, kernel {cin}",
    )
    c, h, wd = x.shape
    cols, h_out, w_out = _im2col(x.data, kh, kw, pad)
    with np.errstate(over="ignore", invalid="ignore"):  # finite check follows
        out = (w.data.reshape(o, -1) @ cols).reshape(o, h_out, w_out)
    if b is not None:
        _require(b.shape == (o,), "conv2d bias must be [O]")
        out = out + b.data[:, None, None]

    def vjp_x(g):
        gcols = (w.data.reshape(o, -1).T @ g.reshape(o, -1)).reshape(
            c, kh, kw, h_out, w_out
        )
        dpad = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                dpad[:, i : i + h_out, j : j + w_out] += gcols[:, i, j]
        return dpad[:, pad : pad + h, pad : pad + wd]

    def vjp_w(g):
        cols_again, _, _ = _im2col(x.data, kh, kw, pad)
        return (g.reshape(o, -1) @ cols_again.T).reshape(w.shape)

    parents = [(x, vjp_x), (w, vjp_w)]
    if b is not None:
        parents.append((b, lambda g: g.sum(axis=(1, 2))))
    return from_op(out, parents, "conv2d")


def depthwise_conv2d(x: Tensor, w: Tensor, pad: int = 1) -> Tensor:
    """Per-channel correlation: [C,H,W] with [C,kh,kw], no bias."""
    _require(x.data.ndim == 3, "depthwise input must be [C,H,W]")
    _require(w.data.ndim == 3, "depthwise kernel must be [C,kh,kw]")
    c, h, wd = x.shape
    ck, kh, kw = w.shape
    _require(kh % 2 == 1 and kw % 2 == 1, "depthwise kernels must have odd size")
    _require(ck == c, f"depthwise channel mismatch: input {c}, kernel {ck}")
    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    h_out = h + 2 * pad - kh + 1
    w_out = wd + 2 * pad - kw + 1
    out = np.zeros((c, h_out, w_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += w.data[:, i, j, None, None] * padded[:, i : i + h_out, j : j + w_out]

    def vjp_x(g):
        dpad = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                dpad[:, i : i + h_out, j : j + w_out] += w.data[:, i, j, None, None] * g
        return dpad[:, pad : pad + h, pad : pad + wd]

    def vjp_w(g):
        dw = np.empty_like(w.data)
        for i in range(kh):
            for j in range(kw):
                dw[:, i, j] = (padded[:, i : i + h_out, j : j + w_out] * g).sum(
                    axis=(1, 2)
                )
        return dw

    return from_op(out, [(x, vjp_x), (w, vjp_w)], "depthwise_conv2d")


def conv_s2(x: Tensor, w: Tensor) -> Tensor:
    """Depthwise stride-2 correlation with pad 1: [C,H,W] -> [C,H/2,W/2]."""
    return _stride2(depthwise_conv2d(x, w, pad=1))


def _stride2(x: Tensor) -> Tensor:
    c, h, w = x.shape
    out = x.data[:, ::2, ::2]

    def vjp(g):
        buf = np.zeros(x.shape, dtype=x.dtype)
        buf[:, ::2, ::2] = g
        return buf

    return from_op(out, [(x, vjp)], "stride2")


def transposed_conv2d_s2(x: Tensor, w: Tensor) -> Tensor:
    """Depthwise stride-2 transposed convolution, [C,h,w] -> [C,2h,2w].

    Implemented as zero interleaving followed by a same-pad correlation
    with the flipped kernel; this is exactly the adjoint of the stride-2
    pad-1 correlation with the same kernel.
    """
    _require(x.data.ndim == 3, "transposed conv input must be [C,h,w]")
    _require(w.data.ndim == 3 and w.shape[1:] == (3, 3), "kernel must be [C,3,3]")
    c, h, wd = x.shape
    _require(w.shape[0] == c, f"channel mismatch: input {c}, kernel {w.shape[0]}")
    stuffed = np.zeros((c, 2 * h, 2 * wd), dtype=x.dtype)
    stuffed[:, ::2, ::2] = x.data
    spad = np.pad(stuffed, ((0, 0), (1, 1), (1, 1)))
    flipped = w.data[:, ::-1, ::-1]
    out = np.zeros((c, 2 * h, 2 * wd), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            out += flipped[:, i, j, None, None] * spad[:, i : i + 2 * h, j : j + 2 * wd]

    def vjp_x(g):
        gp = np.pad(g, ((0, 0), (1, 1), (1, 1)))
        dstuff = np.zeros((c, 2 * h, 2 * wd), dtype=x.dtype)
        for a in range(3):
            for b in range(3):
                dstuff += w.data[:, a, b, None, None] * gp[:, a : a + 2 * h, b : b + 2 * wd]
        return dstuff[:, ::2, ::2]

    def vjp_w(g):
        gp = np.pad(g, ((0, 0), (1, 1), (1, 1)))
        dw = np.empty_like(w.data)
        for a in range(3):
            for b in range(3):
                dw[:, a, b] = (x.data * gp[:, a : a + 2 * h : 2, b : b + 2 * wd : 2]).sum(
                    axis=(1, 2)
                )
        return dw

    return from_op(out, [(x, vjp_x), (w, vjp_w)], "transposed_conv2d_s2")


def avg_pool2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 mean pooling."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise NonDivisibleError("avg_pool2 needs even height and width")
    out = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def vjp(g):
        quarter = (g * 0.25).astype(x.dtype)
        return np.repeat(np.repeat(quarter, 2, axis=1), 2, axis=2)

    return from_op(out, [(x, vjp)], "avg_pool2")


def neighborhood_flatten(x: Tensor, patch: int) -> Tensor:
    """Stack each pixel's patch x patch neighborhood into channels.

    [C,H,W] -> [C*patch*patch, H, W] with zero padding at the borders;
    patch=1 is a plain copy.  Channel order is source-channel major.
    """
    _require(patch % 2 == 1 and patch >= 1, "patch size must be odd")
    c, h, w = x.shape
    r = patch // 2
    padded = np.pad(x.data, ((0, 0), (r, r), (r, r)))
    out = np.empty((c, patch, patch, h, w), dtype=x.dtype)
    for i in range(patch):
        for j in range(patch):
            out[:, i, j] = padded[:, i : i + h, j : j + w]

    def vjp(g):
        gr = g.reshape(c, patch, patch, h, w)
        dpad = np.zeros_like(padded)
        for i in range(patch):
            for j in range(patch):
                dpad[:, i : i + h, j : j + w] += gr[:, i, j]
        return dpad[:, r : r + h, r : r + w]

    return from_op(out.reshape(c * patch * patch, h, w), [(x, vjp)], "neighborhood")


# bicubic weights for the two half-pixel phases (align_corners=false,
# Catmull-Rom a=-0.5); each quadruple sums to exactly 1
_W_EVEN = np.array([-0.0234375, 0.2265625, 0.8671875, -0.0703125])
_W_ODD = _W_EVEN[::-1].copy()
_OFF_EVEN = np.array([-2, -1, 0, 1])
_OFF_ODD = np.array([-1, 0, 1, 2])


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


def _upsample_axis(data: np.ndarray, axis: int) -> np.ndarray:
    n = data.shape[axis]
    moved = np.moveaxis(data, axis, 0)
    base = np.arange(n)
    out = np.empty((2 * n,) + moved.shape[1:], dtype=moved.dtype)
    for parity, (weights, offsets) in enumerate(
        ((_W_EVEN, _OFF_EVEN), (_W_ODD, _OFF_ODD))
    ):
        acc = np.zeros((n,) + moved.shape[1:], dtype=moved.dtype)
        for wgt, off in zip(weights, offsets):
            acc += wgt * moved[_reflect_index(base + off, n)]
        out[parity::2] = acc
    return np.moveaxis(out, 0, axis)


def bicubic_up2(x: np.ndarray) -> np.ndarray:
    """Double both spatial axes of [C,h,w] by bicubic interpolation.

    Reflect borders; not part of the autodiff graph (it only produces
    the initial estimate and the classical upsampling baseline).
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise AutodiffError("bicubic_up2 expects [C,h,w]")
    c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeMismatchError("bicubic_up2 needs at least 2x2 input")
    work = x.astype(np.float64)
    work = _upsample_axis(work, 1)
    work = _upsample_axis(work, 2)
    return work.astype(x.dtype)
