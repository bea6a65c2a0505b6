# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: 3x3x3 convolution (forward, input and weight
gradients) and 2x2x2 max pooling.

Layouts follow the numpy fallback in ``_numpy_kernels`` exactly; the two are
interchangeable behind :mod:`regionseg.tensor.backend`.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef extern from "conv_inner.h":
    void rs_conv_flat(const double *x, const double *w, const Py_ssize_t *off,
                      Py_ssize_t cin, Py_ssize_t cout, Py_ssize_t ntap, Py_ssize_t P,
                      Py_ssize_t lo, Py_ssize_t hi, double *out) nogil
    void rs_conv_wgrad(const double *x, const double *g, const Py_ssize_t *off,
                       Py_ssize_t cin, Py_ssize_t cout, Py_ssize_t ntap, Py_ssize_t P,
                       Py_ssize_t lo, Py_ssize_t hi, double *gw) nogil

NAME = "compiled"


cdef void _pad_into(const double *src, double *dst, Py_ssize_t C, Py_ssize_t X,
                    Py_ssize_t Y, Py_ssize_t Z) noexcept nogil:
    # dst is (C, X+2, Y+2, Z+2), border already zero
    cdef Py_ssize_t c, i, j, k, sy = Z + 2, sx = (Y + 2) * (Z + 2), P = (X + 2) * sx
    cdef const double *s
    cdef double *d
    for c in range(C):
        for i in range(X):
            for j in range(Y):
                s = src + ((c * X + i) * Y + j) * Z
                d = dst + c * P + (i + 1) * sx + (j + 1) * sy + 1
                for k in range(Z):
                    d[k] = s[k]


cdef void _unpad_from(const double *src, double *dst, Py_ssize_t C, Py_ssize_t X,
                      Py_ssize_t Y, Py_ssize_t Z, const double *bias) noexcept nogil:
    cdef Py_ssize_t c, i, j, k, sy = Z + 2, sx = (Y + 2) * (Z + 2), P = (X + 2) * sx
    cdef const double *s
    cdef double *d
    cdef double bv
    for c in range(C):
        bv = bias[c] if bias != NULL else 0.0
        for i in range(X):
            for j in range(Y):
                s = src + c * P + (i + 1) * sx + (j + 1) * sy + 1
                d = dst + ((c * X + i) * Y + j) * Z
                if bias != NULL:
                    for k in range(Z):
                        d[k] = s[k] + bv
                else:
                    for k in range(Z):
                        d[k] = s[k]


cdef _offsets(Py_ssize_t Y, Py_ssize_t Z):
    cdef Py_ssize_t sy = Z + 2, sx = (Y + 2) * (Z + 2)
    return np.array([(i - 1) * sx + (j - 1) * sy + (k - 1)
                     for i in range(3) for j in range(3) for k in range(3)], dtype=np.intp)


def _run_flat(double[:, :, :, :, ::1] x, double[:, ::1] wmat, double[::1] bias, Py_ssize_t cout):
    """Shared driver: x (N, Cin, X, Y, Z), wmat (Cout, Cin*27) -> (N, Cout, X, Y, Z)."""
    cdef Py_ssize_t N = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t X = x.shape[2], Y = x.shape[3], Z = x.shape[4]
    cdef Py_ssize_t sy = Z + 2, sx = (Y + 2) * (Z + 2), P = (X + 2) * sx
    cdef Py_ssize_t L = sx + sy + 1, n, V = X * Y * Z
    out_a = np.empty((N, cout, X, Y, Z))
    cdef double[:, :, :, :, ::1] out = out_a
    xpad_a = np.zeros((cin, P))
    opad_a = np.empty((cout, P))
    cdef double[:, ::1] xpad = xpad_a
    cdef double[:, ::1] opad = opad_a
    off_a = _offsets(Y, Z)
    cdef Py_ssize_t[::1] off = off_a
    cdef const double *bptr = NULL
    if bias is not None:
        bptr = &bias[0]
    if N == 0 or V == 0:
        return out_a
    with nogil:
        for n in range(N):
            _pad_into(&x[n, 0, 0, 0, 0], &xpad[0, 0], cin, X, Y, Z)
            opad[:, :] = 0.0
            rs_conv_flat(&xpad[0, 0], &wmat[0, 0], &off[0], cin, cout, 27, P, L, P - L, &opad[0, 0])
            _unpad_from(&opad[0, 0], &out[n, 0, 0, 0, 0], cout, X, Y, Z, bptr)
    return out_a


def conv3x3_forward(x, w, b):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cout = w.shape[0]
    wmat = np.ascontiguousarray(w, dtype=np.float64).reshape(cout, -1)
    bias = None if b is None else np.ascontiguousarray(b, dtype=np.float64)
    return _run_flat(x, wmat, bias, cout)


def conv3x3_backward_input(gout, w):
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    cin = w.shape[1]
    # flipped taps, swapped channel roles
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4), dtype=np.float64)
    return _run_flat(gout, wt.reshape(cin, -1), None, cin)


def conv3x3_backward_weight(double[:, :, :, :, ::1] x, double[:, :, :, :, ::1] gout):
    cdef Py_ssize_t N = x.shape[0], cin = x.shape[1], cout = gout.shape[1]
    cdef Py_ssize_t X = x.shape[2], Y = x.shape[3], Z = x.shape[4]
    cdef Py_ssize_t sy = Z + 2, sx = (Y + 2) * (Z + 2), P = (X + 2) * sx
    cdef Py_ssize_t L = sx + sy + 1, n
    gw_a = np.zeros((cout, cin, 3, 3, 3))
    cdef double[:, :, :, :, ::1] gw = gw_a
    xpad_a = np.zeros((cin, P))
    gpad_a = np.zeros((cout, P))
    cdef double[:, ::1] xpad = xpad_a
    cdef double[:, ::1] gpad = gpad_a
    off_a = _offsets(Y, Z)
    cdef Py_ssize_t[::1] off = off_a
    if N == 0 or X * Y * Z == 0:
        return gw_a
    with nogil:
        for n in range(N):
            _pad_into(&x[n, 0, 0, 0, 0], &xpad[0, 0], cin, X, Y, Z)
            _pad_into(&gout[n, 0, 0, 0, 0], &gpad[0, 0], cout, X, Y, Z)
            rs_conv_wgrad(&xpad[0, 0], &gpad[0, 0], &off[0], cin, cout, 27, P, L, P - L,
                          &gw[0, 0, 0, 0, 0])
    return gw_a


def maxpool2_forward(double[:, :, :, :, ::1] x):
    """2x2x2/stride-2 max pool. Returns (out, flat argmax into x). Ties go to
    the first element of the window in row-major order."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t X = x.shape[2], Y = x.shape[3], Z = x.shape[4]
    cdef Py_ssize_t X2 = X // 2, Y2 = Y // 2, Z2 = Z // 2
    out_a = np.empty((N, C, X2, Y2, Z2))
    idx_a = np.empty((N, C, X2, Y2, Z2), dtype=np.int64)
    cdef double[:, :, :, :, ::1] out = out_a
    cdef cnp.int64_t[:, :, :, :, ::1] idx = idx_a
    cdef Py_ssize_t n, c, i, j, k, a, b, d, bi
    cdef double best, v
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(X2):
                    for j in range(Y2):
                        for k in range(Z2):
                            best = x[n, c, 2 * i, 2 * j, 2 * k]
                            bi = (((n * C + c) * X + 2 * i) * Y + 2 * j) * Z + 2 * k
                            for a in range(2):
                                for b in range(2):
                                    for d in range(2):
                                        v = x[n, c, 2 * i + a, 2 * j + b, 2 * k + d]
                                        if v > best:
                                            best = v
                                            bi = (((n * C + c) * X + 2 * i + a) * Y + 2 * j + b) * Z + 2 * k + d
                            out[n, c, i, j, k] = best
                            idx[n, c, i, j, k] = bi
    return out_a, idx_a


def maxpool2_backward(gout, idx, shape):
    cdef double[::1] g = np.ascontiguousarray(gout, dtype=np.float64).ravel()
    cdef cnp.int64_t[::1] ix = np.ascontiguousarray(idx, dtype=np.int64).ravel()
    gx_a = np.zeros(int(np.prod(shape)))
    cdef double[::1] gx = gx_a
    cdef Py_ssize_t m, M = g.shape[0]
    with nogil:
        for m in range(M):
            gx[ix[m]] += g[m]
    return gx_a.reshape(shape)
