"""Pure-numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available (or when ENTROMIX_BACKEND=numpy). Signatures and semantics are
the contract; the compiled backend in ``_core.pyx`` mirrors them.

All array arguments are C-contiguous float32 or float64. Forward/backward
kernels return freshly-allocated arrays; the optimizer kernels update
their buffers in place.
"""

import numpy as np

# tanh-form GELU constants
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu_forward(x):
    c = x.dtype.type(_GELU_C)
    a = x.dtype.type(_GELU_A)
    half = x.dtype.type(0.5)
    return half * x * (1.0 + np.tanh(c * (x + a * x * x * x)))


def gelu_backward(x, grad_out):
    c = x.dtype.type(_GELU_C)
    a = x.dtype.type(_GELU_A)
    half = x.dtype.type(0.5)
    t = np.tanh(c * (x + a * x * x * x))
    du = c * (1.0 + 3.0 * a * x * x)
    local = half * (1.0 + t) + half * x * (1.0 - t * t) * du
    return grad_out * local


def softmax_lastdim(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(y, grad_out):
    # dL/dx = (g - sum(g*y)) * y, rowwise over the last axis
    dot = (grad_out * y).sum(axis=-1, keepdims=True)
    return (grad_out - dot) * y


def log_softmax_lastdim(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def log_softmax_backward(y, grad_out):
    # y is the saved log-softmax output; dL/dx = g - exp(y) * sum(g)
    gsum = grad_out.sum(axis=-1, keepdims=True)
    return grad_out - np.exp(y) * gsum


def rownorm_forward(x, eps):
    """Normalize each row of a 2D array to zero mean / unit variance.

    Returns (xhat, inv_std) where inv_std has shape (rows, 1). Variance is
    the population variance (ddof=0) plus eps.
    """
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x - mean) * inv_std
    return xhat, inv_std


def rownorm_backward(xhat, inv_std, grad_out):
    # dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)), rowwise
    gmean = grad_out.mean(axis=-1, keepdims=True)
    gxmean = (grad_out * xhat).mean(axis=-1, keepdims=True)
    return inv_std * (grad_out - gmean - xhat * gxmean)


def avgpool_forward(x, k):
    """Non-overlapping mean pooling over the last axis of a 2D array.

    Trailing samples beyond the last full window are dropped.
    """
    rows, t = x.shape
    t_out = (t - k) // k + 1
    trimmed = x[:, : t_out * k].reshape(rows, t_out, k)
    return trimmed.mean(axis=-1)


def avgpool_backward(grad_out, k, t_in):
    rows, t_out = grad_out.shape
    gin = np.zeros((rows, t_in), dtype=grad_out.dtype)
    spread = np.repeat(grad_out, k, axis=1) / grad_out.dtype.type(k)
    gin[:, : t_out * k] = spread
    return gin


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One AdamW step with decoupled weight decay, in place on flat arrays."""
    p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def sgd_momentum_update(p, g, buf, lr, momentum):
    """One SGD-with-momentum step, in place on flat arrays."""
    buf *= momentum
    buf += g
    p -= lr * buf
