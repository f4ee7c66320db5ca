# cython: language_level=3
"""Compiled MLP kernels: masked forward, backward, and fused MC-dropout sampling.

Same signatures and semantics as ``_core_py``. Dense products go through the
BLAS bundled with scipy; bias, ReLU, dropout gating and the sigmoid are fused
into single passes over the output buffers.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef double PROB_EPS = 1e-7


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       double* a, int lda, double* b, int ldb,
                       double beta, double* c, int ldc) noexcept nogil:
    # column-major dgemm wrapper: C = op(A) op(B) + beta C
    cdef double alpha = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef inline void _matmul(double[:, ::1] x, double[:, ::1] w, double[:, ::1] out) noexcept nogil:
    # row-major out = x @ w
    cdef int rows = x.shape[0], k = x.shape[1], n = w.shape[1]
    _gemm(b'n', b'n', n, rows, k, &w[0, 0], n, &x[0, 0], k, 0.0, &out[0, 0], n)


cdef inline double _sigmoid_clamped(double z) noexcept nogil:
    cdef double p
    if z >= 0:
        p = 1.0 / (1.0 + exp(-z))
    else:
        p = exp(z)
        p = p / (1.0 + p)
    if p < PROB_EPS:
        return PROB_EPS
    if p > 1.0 - PROB_EPS:
        return 1.0 - PROB_EPS
    return p


def forward(list weights, list biases, double[:, ::1] x, list masks, double scale=1.0):
    """Masked forward pass. See ``_core_py.forward``."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t i, j, layer
    cdef double[:, ::1] a = x
    cdef double[:, ::1] z, w, gate
    cdef const unsigned char[:, ::1] m
    cdef double[::1] b
    cdef double v, g_v
    cdef double lut[2]
    lut[0] = 0.0
    lut[1] = scale
    acts = [np.asarray(x)]
    gates = []
    for layer in range(n_layers - 1):
        w = weights[layer]
        b = biases[layer]
        out = np.empty((rows, w.shape[1]))
        z = out
        g = np.empty((rows, w.shape[1]))
        gate = g
        _matmul(a, w, z)
        if masks is None or masks[layer] is None:
            with nogil:
                for i in range(rows):
                    for j in range(z.shape[1]):
                        v = z[i, j] + b[j]
                        if v > 0:
                            z[i, j] = v
                            gate[i, j] = 1.0
                        else:
                            z[i, j] = 0.0
                            gate[i, j] = 0.0
        else:
            m = masks[layer]
            with nogil:
                for i in range(rows):
                    for j in range(z.shape[1]):
                        v = z[i, j] + b[j]
                        # branch-free: random masks defeat the predictor
                        g_v = lut[m[i, j]] if v > 0 else 0.0
                        z[i, j] = v * g_v
                        gate[i, j] = g_v
        acts.append(out)
        gates.append(g)
        a = z
    w = weights[n_layers - 1]
    b = biases[n_layers - 1]
    logits_arr = np.empty((rows, 1))
    cdef double[:, ::1] logits = logits_arr
    _matmul(a, w, logits)
    probs_arr = np.empty(rows)
    cdef double[::1] probs = probs_arr
    with nogil:
        for i in range(rows):
            v = logits[i, 0] + b[0]
            logits[i, 0] = v
            probs[i] = _sigmoid_clamped(v)
    return probs_arr, (acts, gates, logits_arr[:, 0])


def backward(list weights, tuple cache, double[::1] upstream):
    """Backward pass through a cached forward. See ``_core_py.backward``."""
    acts, gates, logits_arr = cache
    cdef double[::1] logits = logits_arr
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t rows = upstream.shape[0]
    cdef Py_ssize_t i, j, layer
    cdef double p, s
    cdef double[:, ::1] d, d_prev, a, w, gw, gate
    cdef double[::1] gb
    d_arr = np.empty((rows, 1))
    d = d_arr
    with nogil:
        for i in range(rows):
            p = 1.0 / (1.0 + exp(-logits[i]))
            if p < PROB_EPS or p > 1.0 - PROB_EPS:
                d[i, 0] = 0.0
            else:
                d[i, 0] = upstream[i] * p * (1.0 - p)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        a = acts[layer]
        w = weights[layer]
        gw_arr = np.empty((w.shape[0], w.shape[1]))
        gw = gw_arr
        gb_arr = np.zeros(w.shape[1])
        gb = gb_arr
        # gw = a.T @ d
        _gemm(b'n', b't', <int>w.shape[1], <int>w.shape[0], <int>rows,
              &d[0, 0], <int>w.shape[1], &a[0, 0], <int>w.shape[0],
              0.0, &gw[0, 0], <int>w.shape[1])
        with nogil:
            for i in range(rows):
                for j in range(d.shape[1]):
                    gb[j] += d[i, j]
        grads_w[layer] = gw_arr
        grads_b[layer] = gb_arr
        if layer > 0:
            prev_arr = np.empty((rows, w.shape[0]))
            d_prev = prev_arr
            # d_prev = d @ w.T
            _gemm(b't', b'n', <int>w.shape[0], <int>rows, <int>w.shape[1],
                  &w[0, 0], <int>w.shape[1], &d[0, 0], <int>w.shape[1],
                  0.0, &d_prev[0, 0], <int>w.shape[0])
            gate = gates[layer - 1]
            with nogil:
                for i in range(rows):
                    for j in range(d_prev.shape[1]):
                        d_prev[i, j] = d_prev[i, j] * gate[i, j]
            d = d_prev
    return grads_w, grads_b


def mc_samples(list weights, list biases, double[:, ::1] x, list masks, Py_ssize_t n_samples,
               double scale=1.0):
    """N dropout-masked predictions per row. See ``_core_py.mc_samples``."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t s, i, j, layer
    cdef double v
    cdef double[:, ::1] w, z, a
    cdef double[::1] b
    cdef const unsigned char[:, :, ::1] m3
    cdef double lut[2]
    lut[0] = 0.0
    lut[1] = scale
    if n_layers == 1:
        probs, _ = forward(weights, biases, x, None)
        return np.tile(probs, (n_samples, 1))
    out_arr = np.empty((n_samples, rows))
    cdef double[:, ::1] out = out_arr

    # first hidden layer does not depend on the mask: compute it once
    w = weights[0]
    b = biases[0]
    h1_arr = np.empty((rows, w.shape[1]))
    cdef double[:, ::1] h1 = h1_arr
    _matmul(x, w, h1)
    with nogil:
        for i in range(rows):
            for j in range(h1.shape[1]):
                v = h1[i, j] + b[j]
                h1[i, j] = v if v > 0 else 0.0

    cdef double[:, ::1] buf
    buf_arr = np.empty((rows, h1.shape[1]))
    buf = buf_arr
    for s in range(n_samples):
        m3 = masks[0]
        with nogil:
            for i in range(rows):
                for j in range(h1.shape[1]):
                    buf[i, j] = h1[i, j] * lut[m3[s, i, j]]
        a = buf
        for layer in range(1, n_layers - 1):
            w = weights[layer]
            b = biases[layer]
            m3 = masks[layer]
            z = np.empty((rows, w.shape[1]))
            _matmul(a, w, z)
            with nogil:
                for i in range(rows):
                    for j in range(z.shape[1]):
                        v = z[i, j] + b[j]
                        v = v if v > 0 else 0.0
                        z[i, j] = v * lut[m3[s, i, j]]
            a = z
        w = weights[n_layers - 1]
        b = biases[n_layers - 1]
        with nogil:
            for i in range(rows):
                v = b[0]
                for j in range(a.shape[1]):
                    v = v + a[i, j] * w[j, 0]
                out[s, i] = _sigmoid_clamped(v)
    return out_arr
