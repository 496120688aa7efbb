# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels for the hot inner loops.

Semantics mirror ``numpy_backend`` exactly (same formulas, same reduction
order); see that module for the contract. Each kernel fuses what the numpy
path does in several temporary-allocating passes into one loop.
"""

import numpy as np

from libc.math cimport exp, expf, log, logf, sqrt, sqrtf, tanh, tanhf, pow

ctypedef fused floating:
    float
    double


cdef inline floating _tanh(floating v) noexcept nogil:
    if floating is float:
        return tanhf(v)
    else:
        return tanh(v)


cdef inline floating _exp(floating v) noexcept nogil:
    if floating is float:
        return expf(v)
    else:
        return exp(v)


cdef inline floating _log(floating v) noexcept nogil:
    if floating is float:
        return logf(v)
    else:
        return log(v)


cdef inline floating _sqrt(floating v) noexcept nogil:
    if floating is float:
        return sqrtf(v)
    else:
        return sqrt(v)


# ---------------------------------------------------------------------------
# GELU (tanh form)

DEF GELU_C = 0.7978845608028654
DEF GELU_A = 0.044715


def _gelu_fwd(floating[::1] x, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef floating c = <floating> GELU_C
    cdef floating a = <floating> GELU_A
    cdef floating v
    with nogil:
        for i in range(n):
            v = x[i]
            out[i] = <floating> 0.5 * v * (<floating> 1.0 + _tanh(c * (v + a * v * v * v)))


def _gelu_bwd(floating[::1] x, floating[::1] g, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef floating c = <floating> GELU_C
    cdef floating a = <floating> GELU_A
    cdef floating v, t, du
    with nogil:
        for i in range(n):
            v = x[i]
            t = _tanh(c * (v + a * v * v * v))
            du = c * (<floating> 1.0 + <floating> 3.0 * a * v * v)
            out[i] = g[i] * (<floating> 0.5 * (<floating> 1.0 + t)
                             + <floating> 0.5 * v * (<floating> 1.0 - t * t) * du)


def gelu_forward(x):
    out = np.empty_like(x)
    _gelu_fwd(x.reshape(-1), out.reshape(-1))
    return out


def gelu_backward(x, grad_out):
    out = np.empty_like(x)
    _gelu_bwd(x.reshape(-1), grad_out.reshape(-1), out.reshape(-1))
    return out


# ---------------------------------------------------------------------------
# Softmax / log-softmax over the last axis

def _softmax_fwd(floating[:, ::1] x, floating[:, ::1] out):
    cdef Py_ssize_t r, j, rows = x.shape[0], cols = x.shape[1]
    cdef floating mx, s
    with nogil:
        for r in range(rows):
            mx = x[r, 0]
            for j in range(1, cols):
                if x[r, j] > mx:
                    mx = x[r, j]
            s = <floating> 0.0
            for j in range(cols):
                out[r, j] = _exp(x[r, j] - mx)
                s += out[r, j]
            for j in range(cols):
                out[r, j] /= s


def _softmax_bwd(floating[:, ::1] y, floating[:, ::1] g, floating[:, ::1] out):
    cdef Py_ssize_t r, j, rows = y.shape[0], cols = y.shape[1]
    cdef floating dot
    with nogil:
        for r in range(rows):
            dot = <floating> 0.0
            for j in range(cols):
                dot += g[r, j] * y[r, j]
            for j in range(cols):
                out[r, j] = (g[r, j] - dot) * y[r, j]


def _log_softmax_fwd(floating[:, ::1] x, floating[:, ::1] out):
    cdef Py_ssize_t r, j, rows = x.shape[0], cols = x.shape[1]
    cdef floating mx, s
    with nogil:
        for r in range(rows):
            mx = x[r, 0]
            for j in range(1, cols):
                if x[r, j] > mx:
                    mx = x[r, j]
            s = <floating> 0.0
            for j in range(cols):
                out[r, j] = x[r, j] - mx
                s += _exp(out[r, j])
            s = _log(s)
            for j in range(cols):
                out[r, j] -= s


def _log_softmax_bwd(floating[:, ::1] y, floating[:, ::1] g, floating[:, ::1] out):
    cdef Py_ssize_t r, j, rows = y.shape[0], cols = y.shape[1]
    cdef floating gsum
    with nogil:
        for r in range(rows):
            gsum = <floating> 0.0
            for j in range(cols):
                gsum += g[r, j]
            for j in range(cols):
                out[r, j] = g[r, j] - _exp(y[r, j]) * gsum


def softmax_lastdim(x):
    out = np.empty_like(x)
    cols = x.shape[x.ndim - 1]
    _softmax_fwd(x.reshape(-1, cols), out.reshape(-1, cols))
    return out


def softmax_backward(y, grad_out):
    out = np.empty_like(y)
    cols = y.shape[y.ndim - 1]
    _softmax_bwd(y.reshape(-1, cols), grad_out.reshape(-1, cols), out.reshape(-1, cols))
    return out


def log_softmax_lastdim(x):
    out = np.empty_like(x)
    cols = x.shape[x.ndim - 1]
    _log_softmax_fwd(x.reshape(-1, cols), out.reshape(-1, cols))
    return out


def log_softmax_backward(y, grad_out):
    out = np.empty_like(y)
    cols = y.shape[y.ndim - 1]
    _log_softmax_bwd(y.reshape(-1, cols), grad_out.reshape(-1, cols), out.reshape(-1, cols))
    return out


# ---------------------------------------------------------------------------
# Row normalization (shared by layer_norm and batch_norm)

def _rownorm_fwd(floating[:, ::1] x, floating[:, ::1] xhat, floating[:, ::1] inv_std,
                 double eps):
    cdef Py_ssize_t r, j, rows = x.shape[0], cols = x.shape[1]
    cdef floating mean, var, d, inv
    with nogil:
        for r in range(rows):
            mean = <floating> 0.0
            for j in range(cols):
                mean += x[r, j]
            mean /= <floating> cols
            var = <floating> 0.0
            for j in range(cols):
                d = x[r, j] - mean
                var += d * d
            var /= <floating> cols
            inv = <floating> 1.0 / _sqrt(var + <floating> eps)
            inv_std[r, 0] = inv
            for j in range(cols):
                xhat[r, j] = (x[r, j] - mean) * inv


def _rownorm_bwd(floating[:, ::1] xhat, floating[:, ::1] inv_std,
                 floating[:, ::1] g, floating[:, ::1] out):
    cdef Py_ssize_t r, j, rows = xhat.shape[0], cols = xhat.shape[1]
    cdef floating gmean, gxmean, inv
    with nogil:
        for r in range(rows):
            gmean = <floating> 0.0
            gxmean = <floating> 0.0
            for j in range(cols):
                gmean += g[r, j]
                gxmean += g[r, j] * xhat[r, j]
            gmean /= <floating> cols
            gxmean /= <floating> cols
            inv = inv_std[r, 0]
            for j in range(cols):
                out[r, j] = inv * (g[r, j] - gmean - xhat[r, j] * gxmean)


def rownorm_forward(x, eps):
    xhat = np.empty_like(x)
    inv_std = np.empty((x.shape[0], 1), dtype=x.dtype)
    _rownorm_fwd(x, xhat, inv_std, float(eps))
    return xhat, inv_std


def rownorm_backward(xhat, inv_std, grad_out):
    out = np.empty_like(xhat)
    _rownorm_bwd(xhat, inv_std, grad_out, out)
    return out


# ---------------------------------------------------------------------------
# Non-overlapping average pooling over the last axis

def _avgpool_fwd(floating[:, ::1] x, floating[:, ::1] out, Py_ssize_t k):
    cdef Py_ssize_t r, j, i, rows = x.shape[0], t_out = out.shape[1]
    cdef floating s
    with nogil:
        for r in range(rows):
            for j in range(t_out):
                s = <floating> 0.0
                for i in range(k):
                    s += x[r, j * k + i]
                out[r, j] = s / <floating> k


def _avgpool_bwd(floating[:, ::1] g, floating[:, ::1] out, Py_ssize_t k):
    cdef Py_ssize_t r, j, i, rows = g.shape[0], t_out = g.shape[1], t_in = out.shape[1]
    cdef floating share
    with nogil:
        for r in range(rows):
            for j in range(t_in):
                out[r, j] = <floating> 0.0
            for j in range(t_out):
                share = g[r, j] / <floating> k
                for i in range(k):
                    out[r, j * k + i] = share


def avgpool_forward(x, k):
    rows, t = x.shape
    t_out = (t - k) // k + 1
    out = np.empty((rows, t_out), dtype=x.dtype)
    _avgpool_fwd(x, out, k)
    return out


def avgpool_backward(grad_out, k, t_in):
    out = np.empty((grad_out.shape[0], t_in), dtype=grad_out.dtype)
    _avgpool_bwd(grad_out, out, k)
    return out


# ---------------------------------------------------------------------------
# Fused optimizer updates (in place)

def _adamw(floating[::1] p, floating[::1] g, floating[::1] m, floating[::1] v,
           double bc1, double bc2, double lr, double beta1, double beta2,
           double eps, double weight_decay):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef floating mhat, vhat
    cdef floating decay = <floating> (1.0 - lr * weight_decay)
    cdef floating b1 = <floating> beta1
    cdef floating b2 = <floating> beta2
    cdef floating ib1 = <floating> (1.0 - beta1)
    cdef floating ib2 = <floating> (1.0 - beta2)
    cdef floating ibc1 = <floating> bc1
    cdef floating ibc2 = <floating> bc2
    cdef floating flr = <floating> lr
    cdef floating feps = <floating> eps
    with nogil:
        for i in range(n):
            p[i] *= decay
            m[i] = b1 * m[i] + ib1 * g[i]
            v[i] = b2 * v[i] + ib2 * g[i] * g[i]
            mhat = m[i] / ibc1
            vhat = v[i] / ibc2
            p[i] -= flr * mhat / (_sqrt(vhat) + feps)


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    _adamw(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
           bc1, bc2, lr, beta1, beta2, eps, weight_decay)


def _sgd(floating[::1] p, floating[::1] g, floating[::1] buf,
         double lr, double momentum):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef floating flr = <floating> lr
    cdef floating mom = <floating> momentum
    with nogil:
        for i in range(n):
            buf[i] = mom * buf[i] + g[i]
            p[i] -= flr * buf[i]


def sgd_momentum_update(p, g, buf, lr, momentum):
    _sgd(p.reshape(-1), g.reshape(-1), buf.reshape(-1), lr, momentum)
