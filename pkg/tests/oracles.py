"""Independent reference implementations used by the tests.

Everything here is written with plain loops or direct formulas so that it
shares no code path with the package under test.
"""

from __future__ import annotations

import math

import numpy as np

from ddstn import autodiff as ad


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def conv2d_loops(x, kern):
    h, w = x.shape
    k = kern.shape[0]
    out = np.zeros((h - k + 1, w - k + 1))
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            acc = 0.0
            for u in range(k):
                for v in range(k):
                    acc += x[i + u, j + v] * kern[u, v]
            out[i, j] = acc
    return out


def conv_batch_loops(x, kern, bias):
    n, c_in, h, w = x.shape
    c_out, _, k, _ = kern.shape
    out = np.zeros((n, c_out, h - k + 1, w - k + 1))
    for s in range(n):
        for o in range(c_out):
            acc = np.full((h - k + 1, w - k + 1), bias[o])
            for c in range(c_in):
                acc = acc + conv2d_loops(x[s, c], kern[o, c])
            out[s, o] = acc
    return out


def kernel_mmd2(fs, ft, kernel):
    """Biased MMD^2 from explicit double loops over a kernel function."""
    def avg(a, b):
        total = 0.0
        for x in a:
            for y in b:
                total += kernel(x, y)
        return total / (len(a) * len(b))

    return avg(fs, fs) + avg(ft, ft) - 2.0 * avg(fs, ft)


def rbf_mmd2(fs, ft, bandwidths):
    vals = [
        kernel_mmd2(fs, ft, lambda x, y, g=g: math.exp(-g * float(np.sum((x - y) ** 2))))
        for g in bandwidths
    ]
    return sum(vals) / len(vals)


def linear_kernel_mmd2(fs, ft):
    return kernel_mmd2(fs, ft, lambda x, y: float(np.dot(x, y)))


def covariance_loops(x):
    n, d = x.shape
    mu = [sum(x[i, a] for i in range(n)) / n for a in range(d)]
    c = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            c[a, b] = sum((x[i, a] - mu[a]) * (x[i, b] - mu[b]) for i in range(n)) / (n - 1)
    return c


def coral_oracle(fs, ft):
    d = fs.shape[1]
    diff = covariance_loops(fs) - covariance_loops(ft)
    return float(np.sum(diff**2)) / (4 * d * d)


def auc_pairs(scores, labels):
    """P(score_pos > score_neg) + 0.5 P(tie) over all positive-negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y > 0]
    neg = [s for s, y in zip(scores, labels) if y < 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def lda_accuracy(X_train, y_train, X_test, y_test):
    """Shared-covariance linear discriminant fitted by hand."""
    mp, mn = X_train[y_train > 0].mean(axis=0), X_train[y_train < 0].mean(axis=0)
    centered = np.vstack([X_train[y_train > 0] - mp, X_train[y_train < 0] - mn])
    cov = centered.T @ centered / (len(X_train) - 2) + 1e-9 * np.eye(X_train.shape[1])
    w = np.linalg.solve(cov, mp - mn)
    c = w @ (mp + mn) / 2
    pred = np.where(X_test @ w - c >= 0, 1.0, -1.0)
    return float(np.mean(pred == y_test))


# ---------------------------------------------------------------- gradients


def finite_difference(fn, arrays, step=1e-5):
    """Central differences of the scalar ``fn(arrays)`` w.r.t. every entry."""
    grads = []
    for idx, a in enumerate(arrays):
        g = np.zeros_like(a)
        for pos in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[idx][pos] += step
            minus[idx][pos] -= step
            g[pos] = (fn(plus) - fn(minus)) / (2 * step)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-8, rtol=1e-4):
    """Worst elementwise relative error, with an absolute floor.

    The scale of each entry is clipped below at ``floor / rtol`` so that a
    result ``<= rtol`` means every entry satisfies
    ``|a - n| <= max(rtol * max(|a|, |n|), floor)``. Central differences carry
    round-off of order 1e-11, which would otherwise dominate tiny gradients.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor / rtol)
        err = np.abs(a - n) / scale
        worst = max(worst, float(err.max(initial=0.0)))
    return worst


def gradient_check(build, arrays, step=1e-5):
    """``build(graph, leaves) -> scalar Tensor``; returns the max relative error."""
    g = ad.Graph()
    leaves = [g.leaf(a) for a in arrays]
    analytic = ad.backward(build(g, leaves), leaves)

    def value(arrs):
        g2 = ad.Graph()
        return build(g2, [g2.leaf(a) for a in arrs]).item()

    numeric = finite_difference(value, arrays, step)
    return max_rel_error(analytic, numeric)
