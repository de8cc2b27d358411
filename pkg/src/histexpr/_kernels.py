"""Hot numeric kernels, each in a numba build and a pure-numpy fallback.

The public names (``conv5_forward``, ``conv5_backward``, ``bias_relu``,
``relu_backward``, ``adam_update``, ``cindex_counts``) are bound to one lane
at import time; see :mod:`histexpr.accel` for the selection rule. Both lanes
implement identical arithmetic on float64 arrays; only evaluation strategy
differs. All take C-contiguous inputs.
"""

import numpy as np

from . import accel


# ---------------------------------------------------------------- numpy lane

def _conv5_forward_np(zpad, w, b):
    # zpad: (B, F+4) zero-padded sequences; w: (C, 5); b: (C,) -> (B, F, C)
    n_out = zpad.shape[1] - 4
    out = np.broadcast_to(b, (zpad.shape[0], n_out, b.shape[0])).copy()
    for k in range(5):
        out += zpad[:, k:k + n_out, None] * w[None, None, :, k]
    return out


def _conv5_backward_np(zpad, da):
    # da: (B, F, C) gradient at the pre-activation -> (dw (C,5), db (C,))
    n_out = da.shape[1]
    dw = np.empty((da.shape[2], 5))
    for k in range(5):
        dw[:, k] = np.tensordot(da, zpad[:, k:k + n_out], axes=([0, 1], [0, 1]))
    db = da.sum(axis=(0, 1))
    return dw, db


def _bias_relu_np(x, b):
    # x: (R, C) pre-bias activations -> relu(x + b)
    return np.maximum(x + b, 0.0)


def _relu_backward_np(dh, h):
    # masks dh in place where the forward output was clipped; returns dh
    dh *= h > 0.0
    return dh


def _adam_update_np(param, grad, m, v, t, lr, beta1, beta2, eps):
    # in-place Adam step on flat views; t is the 1-based step counter
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def _cindex_counts_np(time, event, risk):
    # all-pairs concordance counts; a pair is comparable when the subject
    # with the strictly shorter observed time had an event
    wins = 0
    ties = 0
    comparable = 0
    for i in np.flatnonzero(event):
        later = time > time[i]
        comparable += int(later.sum())
        wins += int((risk[i] > risk[later]).sum())
        ties += int((risk[i] == risk[later]).sum())
    return wins, ties, comparable


# ---------------------------------------------------------------- numba lane

def _conv5_forward_loop(zpad, w, b):
    n_b = zpad.shape[0]
    n_out = zpad.shape[1] - 4
    n_c = w.shape[0]
    out = np.empty((n_b, n_out, n_c))
    for bi in range(n_b):
        for t in range(n_out):
            for c in range(n_c):
                acc = b[c]
                for k in range(5):
                    acc += w[c, k] * zpad[bi, t + k]
                out[bi, t, c] = acc
    return out


def _conv5_backward_loop(zpad, da):
    n_b, n_out, n_c = da.shape
    dw = np.zeros((n_c, 5))
    db = np.zeros(n_c)
    for bi in range(n_b):
        for t in range(n_out):
            for c in range(n_c):
                g = da[bi, t, c]
                db[c] += g
                for k in range(5):
                    dw[c, k] += g * zpad[bi, t + k]
    return dw, db


def _bias_relu_loop(x, b):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            a = x[i, j] + b[j]
            out[i, j] = a if a > 0.0 else 0.0
    return out


def _relu_backward_loop(dh, h):
    for i in range(dh.shape[0]):
        for j in range(dh.shape[1]):
            if h[i, j] <= 0.0:
                dh[i, j] = 0.0
    return dh


def _adam_update_loop(param, grad, m, v, t, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(param.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        param[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def _cindex_counts_loop(time, event, risk):
    n = time.shape[0]
    wins = 0
    ties = 0
    comparable = 0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if event[i] == 1 and time[i] < time[j]:
                comparable += 1
                if risk[i] > risk[j]:
                    wins += 1
                elif risk[i] == risk[j]:
                    ties += 1
    return wins, ties, comparable


if accel.NUMBA_ENABLED:
    conv5_forward = accel.njit(_conv5_forward_loop)
    conv5_backward = accel.njit(_conv5_backward_loop)
    bias_relu = accel.njit(_bias_relu_loop)
    relu_backward = accel.njit(_relu_backward_loop)
    adam_update = accel.njit(_adam_update_loop)
    cindex_counts = accel.njit(_cindex_counts_loop)
else:
    conv5_forward = _conv5_forward_np
    conv5_backward = _conv5_backward_np
    bias_relu = _bias_relu_np
    relu_backward = _relu_backward_np
    adam_update = _adam_update_np
    cindex_counts = _cindex_counts_np
