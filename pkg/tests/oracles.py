"""Independent reference implementations the tests compare against."""
import itertools

import numpy as np


def naive_conv3d(x, w, b=None):
    """Direct 7-loop 3x3x3 cross-correlation with zero padding 1."""
    n, cin, X, Y, Z = x.shape
    cout = w.shape[0]
    out = np.zeros((n, cout, X, Y, Z))
    for s in range(n):
        for o in range(cout):
            for i in range(X):
                for j in range(Y):
                    for k in range(Z):
                        acc = 0.0
                        for c in range(cin):
                            for a, bb, cc in itertools.product(range(3), repeat=3):
                                ii, jj, kk = i + a - 1, j + bb - 1, k + cc - 1
                                if 0 <= ii < X and 0 <= jj < Y and 0 <= kk < Z:
                                    acc += x[s, c, ii, jj, kk] * w[o, c, a, bb, cc]
                        out[s, o, i, j, k] = acc + (0.0 if b is None else b[o])
    return out


def naive_transposed_conv(x, w):
    n, cin, X, Y, Z = x.shape
    cout = w.shape[1]
    out = np.zeros((n, cout, 2 * X, 2 * Y, 2 * Z))
    for i, j, k in itertools.product(range(X), range(Y), range(Z)):
        for a, b, c in itertools.product(range(2), repeat=3):
            out[:, :, 2 * i + a, 2 * j + b, 2 * k + c] += np.einsum("nc,co->no", x[:, :, i, j, k], w[:, :, a, b, c])
    return out


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar f with respect to every entry of x (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300))


def brute_boundary(mask):
    X, Y, Z = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for i, j, k in zip(*np.nonzero(mask)):
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            p = (i + d[0], j + d[1], k + d[2])
            if not (0 <= p[0] < X and 0 <= p[1] < Y and 0 <= p[2] < Z) or not mask[p]:
                out[i, j, k] = True
                break
    return out


def brute_directed(src, dst, spacing):
    """For each boundary voxel of src, min distance to boundary voxels of dst."""
    ps = np.argwhere(brute_boundary(src)) * np.asarray(spacing, dtype=float)
    pd = np.argwhere(brute_boundary(dst)) * np.asarray(spacing, dtype=float)
    return np.sqrt(((ps[:, None, :] - pd[None, :, :]) ** 2).sum(-1)).min(axis=1)


def percentile_linear(values, q):
    """Textbook linear interpolation between order statistics."""
    v = np.sort(np.asarray(values, dtype=float))
    pos = q / 100.0 * (len(v) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return float(v[lo] + (pos - lo) * (v[hi] - v[lo]))


def reference_fcm(x, c, m=2.0, iters=300, seed=0):
    """Textbook fuzzy c-means: random membership start, u_ik = 1 / sum_j (d_ik/d_jk)^(2/(m-1))."""
    rng = np.random.default_rng(seed)
    u = rng.random((x.size, c))
    u /= u.sum(axis=1, keepdims=True)
    for _ in range(iters):
        um = u ** m
        v = um.T @ x / um.sum(axis=0)
        d = np.abs(x[:, None] - v[None, :]) + 1e-12
        u = 1.0 / ((d[:, :, None] / d[:, None, :]) ** (2 / (m - 1))).sum(axis=2)
    return np.sort(v)


def dsc_sets(a, b):
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return 2 * len(a & b) / (len(a) + len(b))
