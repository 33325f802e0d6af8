"""Convolution family and GDN.

Convolutions use NCHW data and (out, in, kh, kw) kernels. Forward passes run
an im2col product on a strided window view; the input gradient scatters the
column gradient back one kernel tap at a time, so no ``np.add.at`` is needed.
A transposed convolution is defined as the exact adjoint of the strided
"same"-padded convolution whose input is ``stride`` times larger.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_op


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _resolve_padding(padding, h, w, kh, kw, stride):
    if padding == "same":
        return same_padding(h, kh, stride), same_padding(w, kw, stride)
    if padding == "valid":
        return (0, 0), (0, 0)
    p = int(padding)
    return (p, p), (p, p)


def _check(x: np.ndarray, k: np.ndarray, stride: int, in_axis: int) -> None:
    if x.ndim != 4 or k.ndim != 4:
        raise ValueError(f"expected 4-D input and kernel, got {x.shape} and {k.shape}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if x.shape[1] != k.shape[in_axis]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {k.shape[in_axis]}")


def _columns(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """im2col: contiguous (N*Ho*Wo, C*kh*kw) matrix of input patches."""
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = view.shape[:4]
    return np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def _forward(x, k, stride, pads):
    (pt, pb), (pl, pr) = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x
    n = x.shape[0]
    ho = (xp.shape[2] - k.shape[2]) // stride + 1
    wo = (xp.shape[3] - k.shape[3]) // stride + 1
    cols = _columns(xp, k.shape[2], k.shape[3], stride)
    out = cols @ k.reshape(k.shape[0], -1).T  # (N*Ho*Wo, O)
    return np.ascontiguousarray(out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)), cols


def _input_grad(g, k, stride, pads, in_shape):
    """Adjoint of ``_forward`` with respect to its input."""
    (pt, pb), (pl, pr) = pads
    n, c, h, w = in_shape
    kh, kw = k.shape[2], k.shape[3]
    ho, wo = g.shape[2], g.shape[3]
    # (C, kh, kw, N, Ho, Wo): each tap is a contiguous block
    dcols = np.tensordot(k, g, axes=([0], [1]))
    dxp = np.zeros((c, n, h + pt + pb, w + pl + pr))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += dcols[:, i, j]
    return dxp[:, :, pt:pt + h, pl:pl + w].transpose(1, 0, 2, 3)


def _kernel_grad(g, cols, kshape):
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, g.shape[1])
    return (g2.T @ cols).reshape(kshape)  # (O, C, kh, kw)


def conv2d(x, kernel, stride: int = 1, padding="same") -> Tensor:
    """2-D cross-correlation. ``padding`` is "same", "valid" or an int."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check(x.data, kernel.data, stride, in_axis=1)
    kh, kw = kernel.shape[2:]
    pads = _resolve_padding(padding, x.shape[2], x.shape[3], kh, kw, stride)
    out, cols = _forward(x.data, kernel.data, stride, pads)

    def back(g):
        gx = _input_grad(g, kernel.data, stride, pads, x.shape) if x.requires_grad else None
        gk = _kernel_grad(g, cols, kernel.shape) if kernel.requires_grad else None
        return gx, gk

    return make_op(out, (x, kernel), back, "conv2d")


def transposed_conv2d(y, kernel, stride: int = 1) -> Tensor:
    """Upsampling convolution, adjoint to ``conv2d(., kernel, stride, "same")``.

    ``kernel`` keeps the forward-convolution layout (in_y, out, kh, kw) and the
    output has spatial extent ``stride`` times the input's.
    """
    y, kernel = as_tensor(y), as_tensor(kernel)
    _check(y.data, kernel.data, stride, in_axis=0)
    n, _, h, w = y.shape
    kh, kw = kernel.shape[2:]
    out_shape = (n, kernel.shape[1], h * stride, w * stride)
    pads = _resolve_padding("same", out_shape[2], out_shape[3], kh, kw, stride)
    out = np.ascontiguousarray(_input_grad(y.data, kernel.data, stride, pads, out_shape))

    def back(g):
        fwd, cols = _forward(g, kernel.data, stride, pads)
        gk = _kernel_grad(y.data, cols, kernel.shape) if kernel.requires_grad else None
        return fwd, gk

    return make_op(out, (y, kernel), back, "transposed_conv2d")


def causal_mask(size: int) -> np.ndarray:
    """Raster-order mask: taps strictly before the centre are 1."""
    if size % 2 == 0:
        raise ValueError(f"masked kernels need an odd size, got {size}")
    mask = np.zeros((size, size))
    c = size // 2
    mask[:c, :] = 1.0
    mask[c, :c] = 1.0
    return mask


def left_neighbor_mask(size: int = 3) -> np.ndarray:
    mask = np.zeros((size, size))
    mask[size // 2, size // 2 - 1] = 1.0
    return mask


def previous_row_mask(size: int = 3) -> np.ndarray:
    """The three taps directly above-left, above and above-right."""
    mask = np.zeros((size, size))
    c = size // 2
    mask[c - 1, c - 1:c + 2] = 1.0
    return mask


def masked_conv2d(x, kernel, mask: np.ndarray) -> Tensor:
    """Stride-1 "same" convolution whose kernel is multiplied by a spatial mask."""
    kernel = as_tensor(kernel)
    kh, kw = kernel.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"masked convolution needs odd kernel sizes, got {kh}x{kw}")
    if mask.shape != (kh, kw):
        raise ValueError(f"mask shape {mask.shape} does not match kernel {kh}x{kw}")
    if mask[kh // 2, kw // 2] != 0 or mask[kh // 2 + 1:].any() or mask[kh // 2, kw // 2 + 1:].any():
        raise ValueError("mask exposes the centre or a later position")
    return conv2d(x, kernel * mask, stride=1, padding="same")


def gdn(x, beta, gamma, inverse: bool = False) -> Tensor:
    """y_c = x_c / sqrt(beta_c + sum_k gamma_ck x_k^2); multiplies when ``inverse``.

    ``beta`` has shape (C,), ``gamma`` (C, C); both must already be positive.
    """
    x, beta, gamma = as_tensor(x), as_tensor(beta), as_tensor(gamma)
    if (beta.data <= 0).any():
        raise ValueError("GDN beta must be positive")
    c = x.shape[1]
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise ValueError(f"GDN parameters {beta.shape}/{gamma.shape} do not fit {c} channels")
    n, _, h, w = x.shape
    sq = (x.data * x.data).reshape(n, c, h * w)
    norm = (beta.data[:, None] + np.matmul(gamma.data, sq)).reshape(x.shape)
    root = np.sqrt(norm)
    out = x.data * root if inverse else x.data / root

    def back(g):
        if inverse:
            gx = g * root
            gnorm = g * x.data * 0.5 / root
        else:
            gx = g / root
            gnorm = -0.5 * g * x.data / (root * norm)
        gflat = gnorm.reshape(n, c, h * w)
        gx = gx + 2.0 * x.data * np.matmul(gamma.data.T, gflat).reshape(x.shape)
        gbeta = gflat.sum(axis=(0, 2))
        ggamma = np.tensordot(gflat, sq, axes=([0, 2], [0, 2]))
        return gx, gbeta, ggamma

    return make_op(out, (x, beta, gamma), back, "igdn" if inverse else "gdn")
