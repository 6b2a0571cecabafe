"""Compiled mini-batch SGD for the ReLU perceptron.

Parameters live in one flat vector; layer k's weight block is
sizes[k] x sizes[k+1] starting at w_off[k], its bias at b_off[k].
"""

import numpy as np
from numba import njit


def offsets(sizes):
    w_off, b_off = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w_off.append(pos)
        pos += fan_in * fan_out
        b_off.append(pos)
        pos += fan_out
    return np.array(w_off, np.int64), np.array(b_off, np.int64), pos


@njit(cache=True)
def sgd(params, sizes, w_off, b_off, X, y, orders, lr, batch_size):
    """Plain SGD on mean cross-entropy; orders[e] is epoch e's row order."""
    n_layers = sizes.shape[0] - 1
    width = 0
    for k in range(sizes.shape[0]):
        width = max(width, sizes[k])
    acts = np.zeros((n_layers + 1, batch_size, width))
    delta = np.zeros((batch_size, width))
    nxt = np.zeros((batch_size, width))
    n = X.shape[0]
    for e in range(orders.shape[0]):
        for start in range(0, n, batch_size):
            m = min(batch_size, n - start)
            for r in range(m):
                for c in range(sizes[0]):
                    acts[0, r, c] = X[orders[e, start + r], c]
            for k in range(n_layers):
                a, b = sizes[k], sizes[k + 1]
                W = params[w_off[k]:w_off[k] + a * b].reshape(a, b)
                bias = params[b_off[k]:b_off[k] + b]
                z = np.ascontiguousarray(acts[k, :m, :a]) @ W
                for r in range(m):
                    for c in range(b):
                        v = z[r, c] + bias[c]
                        acts[k + 1, r, c] = v if (k == n_layers - 1 or v > 0.0) else 0.0
            for r in range(m):
                zr = acts[n_layers, r, 0]
                delta[r, 0] = (0.5 * (1.0 + np.tanh(0.5 * zr)) - y[orders[e, start + r]]) / m
            for k in range(n_layers - 1, -1, -1):
                a, b = sizes[k], sizes[k + 1]
                W = params[w_off[k]:w_off[k] + a * b].reshape(a, b)
                d = np.ascontiguousarray(delta[:m, :b])
                if k > 0:
                    back = d @ W.T
                    for r in range(m):
                        for c in range(a):
                            nxt[r, c] = back[r, c] if acts[k, r, c] > 0.0 else 0.0
                gW = np.ascontiguousarray(acts[k, :m, :a]).T @ d
                for i in range(a):
                    for j in range(b):
                        W[i, j] -= lr * gW[i, j]
                for j in range(b):
                    g = 0.0
                    for r in range(m):
                        g += d[r, j]
                    params[b_off[k] + j] -= lr * g
                if k > 0:
                    for r in range(m):
                        for c in range(a):
                            delta[r, c] = nxt[r, c]
    return params
