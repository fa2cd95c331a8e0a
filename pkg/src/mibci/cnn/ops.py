"""Array-level forward/backward kernels.

All kernels take a leading batch axis: images are ``(N, C, H, W)``, feature
vectors ``(N, F)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(xp, k, stride, out_h, out_w):
    # (N, C, Ho, Wo, k, k) view onto the padded input
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]


def conv2d_forward(x, w, b, stride=1, pad=0):
    """``out[n,o,i,j] = b[o] + sum_{c,u,v} w[o,c,u,v] * xpad[n,c,i*s+u,j*s+v]``"""
    n, c, h, wd = x.shape
    o, wc, k, k2 = w.shape
    if wc != c or k != k2 or b.shape != (o,):
        raise ShapeMismatch(f"input {x.shape} vs weights {w.shape}, bias {b.shape}")
    out_h, out_w = conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"kernel {k} with pad {pad} does not fit input {h}x{wd}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _windows(xp, k, stride, out_h, out_w)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None]


def conv2d_backward(x, w, grad_out, stride=1, pad=0):
    """Returns ``(grad_x, grad_w, grad_b)`` for :func:`conv2d_forward`."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    out_h, out_w = conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)
    if grad_out.shape != (n, o, out_h, out_w):
        raise ShapeMismatch(f"grad_out {grad_out.shape}, expected {(n, o, out_h, out_w)}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _windows(xp, k, stride, out_h, out_w)
    grad_w = np.tensordot(grad_out, cols, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_out.sum(axis=(0, 2, 3))
    dcols = np.tensordot(grad_out, w, axes=([1], [0]))  # (N, Ho, Wo, C, k, k)
    gxp = np.zeros_like(xp)
    for u in range(k):
        for v in range(k):
            gxp[:, :, u : u + stride * (out_h - 1) + 1 : stride,
                v : v + stride * (out_w - 1) + 1 : stride] += dcols[..., u, v].transpose(0, 3, 1, 2)
    grad_x = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
    return grad_x, grad_w, grad_b


def maxpool_forward(x, k=2, stride=2):
    """Max over ``k x k`` windows. Returns ``(out, argmax)`` where ``argmax``
    holds the flat input index of each winner; ties go to the lowest index."""
    n, c, h, wd = x.shape
    out_h, out_w = conv_out_size(h, k, stride, 0), conv_out_size(wd, k, stride, 0)
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"pool {k} does not fit input {h}x{wd}")
    win = _windows(x, k, stride, out_h, out_w).reshape(n, c, out_h, out_w, k * k)
    pos = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, pos[..., None], axis=-1)[..., 0]
    u, v = np.divmod(pos, k)
    rows = np.arange(out_h)[:, None] * stride + u
    cols = np.arange(out_w)[None, :] * stride + v
    base = (np.arange(n)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * h * wd
    return out, base + rows * wd + cols


def maxpool_backward(grad_out, argmax, in_shape):
    flat = np.bincount(argmax.reshape(-1), weights=grad_out.reshape(-1),
                       minlength=int(np.prod(in_shape)))
    return flat.reshape(in_shape).astype(grad_out.dtype, copy=False)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0)


def dense_forward(x, w, b):
    """``y = x @ w.T + b`` with ``w`` of shape ``(out, in)``."""
    if x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"input {x.shape} vs weights {w.shape}, bias {b.shape}")
    return x @ w.T + b


def dense_backward(x, w, grad_out):
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)


def dropout_forward(x, rate, train, rng):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` is None when the
    layer is the identity (eval mode or ``rate == 0``)."""
    if not train or rate == 0:
        return x, None
    keep = rng.uniform(x.size).reshape(x.shape) > rate
    mask = keep.astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, grad_out):
    return grad_out if mask is None else grad_out * mask


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    Accepts a single logit vector with an integer label, or a batch
    ``(N, K)`` with ``N`` labels.
    """
    logits = np.asarray(logits)
    if logits.dtype.kind != "f":
        logits = logits.astype(np.float64)
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape != (z.shape[0],) or np.any(y < 0) or np.any(y >= z.shape[1]):
        raise ShapeMismatch(f"labels {y} do not match logits {z.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    losses = logsum - shifted[np.arange(len(y)), y]
    p = np.exp(shifted - logsum[:, None])
    grad = p
    grad[np.arange(len(y)), y] -= 1.0
    grad /= len(y)
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad
