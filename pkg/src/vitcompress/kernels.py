"""Hot numeric kernels with two interchangeable backends.

The numba backend jit-compiles the row-wise loops (softmax, layernorm, gelu,
cross-entropy, the AdamW update); the numpy backend is pure vectorized numpy
and is the reference fallback. Select with the environment variable
``VITCOMPRESS_BACKEND`` ("numba" or "numpy"); default is numba when it
imports, numpy otherwise.

All reductions are fixed-order (leading-axis-major, left-to-right within a
row for numba, numpy pairwise summation for the fallback), so each backend is
bit-deterministic run to run. The two backends may differ from each other in
the last ulps.

``benchmarks/bench_kernels.py`` times both backends side by side.
"""

import math
import os

import numpy as np
from scipy.special import erf as _erf_np

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _softmax_numpy(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_grad_numpy(y, gy):
    s = (y * gy).sum(axis=1, keepdims=True)
    return y * (gy - s)


def _layernorm_numpy(x, gamma, beta, eps):
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    var = (xc * xc).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def _layernorm_grad_numpy(x, gamma, mean, rstd, gy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = gy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    dgamma = (gy * xhat).sum(axis=0)
    dbeta = gy.sum(axis=0)
    return gx, dgamma, dbeta


def _gelu_numpy(x):
    return 0.5 * x * (1.0 + _erf_np(x * _INV_SQRT2))


def _gelu_grad_numpy(x, gy):
    return gy * (0.5 * (1.0 + _erf_np(x * _INV_SQRT2))
                 + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI)


def _cross_entropy_numpy(logits, labels):
    B = logits.shape[0]
    m = logits.max(axis=1)
    z = logits - m[:, None]
    lse = np.log(np.exp(z).sum(axis=1)) + m
    nll = lse - logits[np.arange(B), labels]
    probs = np.exp(logits - lse[:, None])
    return nll.mean(dtype=logits.dtype), probs


def _adamw_numpy(p, g, m, v, lr, b1, b2, eps, wd, t):
    if wd != 0.0:
        p *= 1.0 - lr * wd
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


NUMPY_IMPLS = {
    "softmax": _softmax_numpy,
    "softmax_grad": _softmax_grad_numpy,
    "layernorm": _layernorm_numpy,
    "layernorm_grad": _layernorm_grad_numpy,
    "gelu": _gelu_numpy,
    "gelu_grad": _gelu_grad_numpy,
    "cross_entropy": _cross_entropy_numpy,
    "adamw_update": _adamw_numpy,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impls():
    from numba import njit

    @njit(cache=True)
    def softmax_nb(x):
        rows, n = x.shape
        out = np.empty_like(x)
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, n):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(n):
                e = math.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(n):
                out[i, j] = out[i, j] / s
        return out

    @njit(cache=True)
    def softmax_grad_nb(y, gy):
        rows, n = y.shape
        out = np.empty_like(y)
        for i in range(rows):
            s = 0.0
            for j in range(n):
                s += y[i, j] * gy[i, j]
            for j in range(n):
                out[i, j] = y[i, j] * (gy[i, j] - s)
        return out

    @njit(cache=True)
    def layernorm_nb(x, gamma, beta, eps):
        rows, n = x.shape
        out = np.empty_like(x)
        mean = np.empty(rows, dtype=x.dtype)
        rstd = np.empty(rows, dtype=x.dtype)
        for i in range(rows):
            mu = 0.0
            for j in range(n):
                mu += x[i, j]
            mu /= n
            var = 0.0
            for j in range(n):
                d = x[i, j] - mu
                var += d * d
            var /= n
            r = 1.0 / math.sqrt(var + eps)
            mean[i] = mu
            rstd[i] = r
            for j in range(n):
                out[i, j] = (x[i, j] - mu) * r * gamma[j] + beta[j]
        return out, mean, rstd

    @njit(cache=True)
    def layernorm_grad_nb(x, gamma, mean, rstd, gy):
        rows, n = x.shape
        gx = np.empty_like(x)
        dgamma = np.zeros(n, dtype=x.dtype)
        dbeta = np.zeros(n, dtype=x.dtype)
        for i in range(rows):
            mu = mean[i]
            r = rstd[i]
            m1 = 0.0
            m2 = 0.0
            for j in range(n):
                xhat = (x[i, j] - mu) * r
                dxh = gy[i, j] * gamma[j]
                m1 += dxh
                m2 += dxh * xhat
                dgamma[j] += gy[i, j] * xhat
                dbeta[j] += gy[i, j]
            m1 /= n
            m2 /= n
            for j in range(n):
                xhat = (x[i, j] - mu) * r
                dxh = gy[i, j] * gamma[j]
                gx[i, j] = r * (dxh - m1 - xhat * m2)
        return gx, dgamma, dbeta

    @njit(cache=True)
    def gelu_nb(x):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            v = flat[i]
            out[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))
        return out.reshape(x.shape)

    @njit(cache=True)
    def gelu_grad_nb(x, gy):
        flat = x.ravel()
        gflat = gy.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            v = flat[i]
            out[i] = gflat[i] * (0.5 * (1.0 + math.erf(v * _INV_SQRT2))
                                 + v * math.exp(-0.5 * v * v) * _INV_SQRT2PI)
        return out.reshape(x.shape)

    @njit(cache=True)
    def cross_entropy_nb(logits, labels):
        B, C = logits.shape
        probs = np.empty_like(logits)
        total = 0.0
        for i in range(B):
            m = logits[i, 0]
            for j in range(1, C):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(C):
                e = math.exp(logits[i, j] - m)
                probs[i, j] = e
                s += e
            for j in range(C):
                probs[i, j] = probs[i, j] / s
            total += math.log(s) + m - logits[i, labels[i]]
        return total / B, probs

    @njit(cache=True)
    def adamw_nb(p, g, m, v, lr, b1, b2, eps, wd, t):
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        decay = 1.0 - lr * wd
        for i in range(p.size):
            if wd != 0.0:
                p[i] = p[i] * decay
            m[i] = b1 * m[i] + (1.0 - b1) * g[i]
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
            p[i] = p[i] - lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)

    def cross_entropy(logits, labels):
        loss, probs = cross_entropy_nb(logits, labels)
        return logits.dtype.type(loss), probs

    return {
        "softmax": softmax_nb,
        "softmax_grad": softmax_grad_nb,
        "layernorm": layernorm_nb,
        "layernorm_grad": layernorm_grad_nb,
        "gelu": gelu_nb,
        "gelu_grad": gelu_grad_nb,
        "cross_entropy": cross_entropy,
        "adamw_update": adamw_nb,
    }


def _pick_backend():
    requested = os.environ.get("VITCOMPRESS_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise RuntimeError(
            f"VITCOMPRESS_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy", NUMPY_IMPLS
    try:
        impls = _build_numba_impls()
        return "numba", impls
    except ImportError:
        if requested == "numba":
            raise
        return "numpy", NUMPY_IMPLS


BACKEND, _IMPLS = _pick_backend()

softmax = _IMPLS["softmax"]
softmax_grad = _IMPLS["softmax_grad"]
layernorm = _IMPLS["layernorm"]
layernorm_grad = _IMPLS["layernorm_grad"]
gelu = _IMPLS["gelu"]
gelu_grad = _IMPLS["gelu_grad"]
cross_entropy = _IMPLS["cross_entropy"]
adamw_update = _IMPLS["adamw_update"]


def numba_impls():
    """Build (or rebuild) the numba table regardless of the active backend."""
    return _build_numba_impls()
