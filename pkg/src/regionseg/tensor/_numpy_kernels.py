"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled module. The convolution uses the flat-padded
shift trick: every 3x3x3 tap becomes a constant offset into the flattened
padded sample, so the 27 shifted copies can be stacked and contracted with one
matrix product (an im2col without strided gathers).
"""
import numpy as np

NAME = "numpy"


def _geometry(X, Y, Z):
    sy = Z + 2
    sx = (Y + 2) * sy
    P = (X + 2) * sx
    L = sx + sy + 1
    offs = [(i - 1) * sx + (j - 1) * sy + (k - 1)
            for i in range(3) for j in range(3) for k in range(3)]
    return P, L, offs


def _pad_flat(x):
    n, c = x.shape[:2]
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1))).reshape(n, c, -1)


def _columns(xf, L, P, offs):
    # xf (C, P) -> (C*27, P - 2L), ordered input-channel major like the weights
    C = xf.shape[0]
    cols = np.empty((C, 27, P - 2 * L))
    for t, off in enumerate(offs):
        cols[:, t] = xf[:, L + off:P - L + off]
    return cols.reshape(C * 27, -1)


def _interior(flat, L, X, Y, Z):
    # flat (C, P - 2L) indexed from L -> (C, X, Y, Z)
    C = flat.shape[0]
    full = np.zeros((C, (X + 2) * (Y + 2) * (Z + 2)))
    full[:, L:L + flat.shape[1]] = flat
    return full.reshape(C, X + 2, Y + 2, Z + 2)[:, 1:-1, 1:-1, 1:-1]


def _run(x, wmat, bias):
    N, _, X, Y, Z = x.shape
    P, L, offs = _geometry(X, Y, Z)
    out = np.empty((N, wmat.shape[0], X, Y, Z))
    xf = _pad_flat(x)
    for n in range(N):
        res = wmat @ _columns(xf[n], L, P, offs)
        out[n] = _interior(res, L, X, Y, Z)
    if bias is not None:
        out += bias[None, :, None, None, None]
    return out


def conv3x3_forward(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    return _run(x, w.reshape(w.shape[0], -1), b)


def conv3x3_backward_input(gout, w):
    wt = w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
    return _run(np.asarray(gout, dtype=np.float64), wt.reshape(wt.shape[0], -1), None)


def conv3x3_backward_weight(x, gout):
    N, cin, X, Y, Z = x.shape
    cout = gout.shape[1]
    P, L, offs = _geometry(X, Y, Z)
    xf = _pad_flat(x)
    gf = _pad_flat(gout)
    gw = np.zeros((cout, cin * 27))
    for n in range(N):
        gw += gf[n][:, L:P - L] @ _columns(xf[n], L, P, offs).T
    return gw.reshape(cout, cin, 3, 3, 3)


def maxpool2_forward(x):
    N, C, X, Y, Z = x.shape
    X2, Y2, Z2 = X // 2, Y // 2, Z // 2
    win = (x.reshape(N, C, X2, 2, Y2, 2, Z2, 2)
           .transpose(0, 1, 2, 4, 6, 3, 5, 7)
           .reshape(N, C, X2, Y2, Z2, 8))
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    a, rem = np.divmod(arg, 4)
    b, d = np.divmod(rem, 2)
    n_i, c_i, i_i, j_i, k_i = np.indices((N, C, X2, Y2, Z2), sparse=True)
    idx = (((n_i * C + c_i) * X + 2 * i_i + a) * Y + 2 * j_i + b) * Z + 2 * k_i + d
    return out, idx.astype(np.int64)


def maxpool2_backward(gout, idx, shape):
    # windows are disjoint, so every input index is hit at most once
    gx = np.zeros(int(np.prod(shape)))
    gx[idx.ravel()] = np.asarray(gout, dtype=np.float64).ravel()
    return gx.reshape(shape)
