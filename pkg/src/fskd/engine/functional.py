"""Network and loss primitives built on the tape."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, Tensor, as_tensor, make_result, matmul, tsum

NORM_EPS = 1e-12


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """NHWC padded input -> (N*Ho*Wo, k*k*C) patch matrix, columns ordered (ki, kj, c)."""
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, k, k, c), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :]
    return cols.reshape(n * ho * wo, k * k * c)


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with an OCkk kernel, zero padded."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OCkk kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {kc}")
    if kh != kw:
        raise ValueError(f"conv2d needs a square kernel, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    k = kh
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {x.shape}, kernel {k}, padding {padding}")

    hp, wp = h + 2 * padding, w + 2 * padding
    xp = np.zeros((n, hp, wp, c), dtype=DTYPE)
    xp[:, padding : padding + h, padding : padding + w, :] = x.data.transpose(0, 2, 3, 1)
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = kernel.data.transpose(2, 3, 1, 0).reshape(k * k * c, o)
    out = (cols @ wmat).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        gk = None
        if kernel.requires_grad:
            gk = (cols.T @ g2).reshape(k, k, c, o).transpose(3, 2, 0, 1)
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, k, k, c)
            gxp = np.zeros((n, hp, wp, c), dtype=DTYPE)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :] += dcols[
                        :, :, :, i, j, :
                    ]
            gx = gxp[:, padding : padding + h, padding : padding + w, :].transpose(0, 3, 1, 2)
        return gx, gk

    return make_result(np.ascontiguousarray(out), (x, kernel), back)


def linear(x, weight) -> Tensor:
    """Bias-free fully connected layer: ``x @ weight`` with weight of shape d x n."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    return matmul(x, weight)


def avg_pool2d(x, kernel_size: int, stride: int = None) -> Tensor:
    x = as_tensor(x)
    stride = kernel_size if stride is None else stride
    n, c, h, w = x.shape
    k = kernel_size
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"avg_pool2d window {k} larger than input {h}x{w}")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = win.mean(axis=(4, 5))

    def back(g):
        gx = np.zeros(x.shape, dtype=DTYPE)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += share
        return (gx,)

    return make_result(out, (x,), back)


def global_avg_pool(x) -> Tensor:
    """NCHW -> NC by averaging over the spatial axes."""
    x = as_tensor(x)
    hw = x.shape[2] * x.shape[3]
    return make_result(
        x.data.mean(axis=(2, 3)),
        (x,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / hw, x.shape),),
    )


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over N(,H,W) for NC or NCHW input.

    In training mode the batch moments normalize the input and the running
    buffers are updated in place; in eval mode the running buffers are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    count = x.size // x.shape[1]
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in training mode needs a batch of at least 2 samples")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def back(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                s1 = gxhat.sum(axis=axes).reshape(bshape)
                s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = (gxhat - s1 / count - xhat * s2 / count) * inv_std.reshape(bshape)
            else:
                gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), back)


def l2_norm(x, axes=None, keepdims: bool = False, eps: float = NORM_EPS) -> Tensor:
    """Euclidean norm over ``axes``.

    The forward value is exact; ``eps`` only guards the derivative, so a zero
    vector has norm 0 and gradient 0 instead of NaN.
    """
    x = as_tensor(x)
    ss = np.sum(x.data * x.data, axis=axes, keepdims=True)
    out = np.sqrt(ss)
    value = out if keepdims else np.squeeze(out, axis=axes) if axes is not None else out.reshape(())

    def back(g):
        g = np.reshape(g, out.shape)
        return (g * x.data / np.sqrt(ss + eps),)

    return make_result(value, (x,), back)


def normalize(x, axes, eps: float = NORM_EPS) -> Tensor:
    """``x / ||x||`` along ``axes``; a zero slice maps to zero.

    Same epsilon policy as :func:`l2_norm`: the forward value is exact (so it
    is invariant to positive rescaling) and ``eps`` only guards the
    derivative's ``1 / ||x||`` factor.
    """
    x = as_tensor(x)
    ss = np.sum(x.data * x.data, axis=axes, keepdims=True)
    norm = np.sqrt(ss)
    out = np.divide(x.data, norm, out=np.zeros_like(x.data), where=norm > 0)

    def back(g):
        radial = np.sum(g * out, axis=axes, keepdims=True)
        return ((g - out * radial) / np.sqrt(ss + eps),)

    return make_result(out, (x,), back)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])

    def back(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return make_result(np.asarray(loss), (logits,), back)
