"""Small ReLU multilayer perceptron with a sigmoid output unit."""

import numpy as np

from ..seeding import rng
from . import _mlp_kernel as K


def init_weights(sizes, seed):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    gen = rng(seed, 4)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append((gen.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return layers


def forward(layers, X):
    """Return the logit and the list of layer inputs needed for backprop."""
    acts = [X]
    h = X
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = layers[-1]
    return (h @ W + b)[:, 0], acts


def loss_and_grad(layers, X, y):
    """Mean binary cross-entropy and its gradient for every (W, b)."""
    z, acts = forward(layers, X)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    delta = ((0.5 * (1.0 + np.tanh(0.5 * z)) - y) / len(y))[:, None]
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads[k] = (acts[k].T @ delta, delta.sum(axis=0))
        if k > 0:
            delta = (delta @ W.T) * (acts[k] > 0)
    return loss, grads


class MLP:
    def __init__(self, hidden=(32,), lr=0.01, epochs=500, batch_size=32):
        self.hidden = tuple(int(h) for h in (hidden if isinstance(hidden, (list, tuple)) else (hidden,)))
        self.lr = float(lr)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.layers_ = None

    def fit(self, X, y, seed=0):
        n, d = X.shape
        sizes = [d, *self.hidden, 1]
        layers = init_weights(sizes, seed)
        order_rng = rng(seed, 5)
        orders = np.array([order_rng.permutation(n) for _ in range(self.epochs)], dtype=np.int64)
        w_off, b_off, total = K.offsets(sizes)
        params = np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])
        params = K.sgd(params, np.array(sizes, np.int64), w_off, b_off,
                       np.ascontiguousarray(X, dtype=np.float64),
                       np.ascontiguousarray(y, dtype=np.float64), orders, self.lr,
                       self.batch_size)
        self.layers_ = [(params[w:w + a * b].reshape(a, b).copy(), params[o:o + b].copy())
                        for w, o, a, b in zip(w_off, b_off, sizes[:-1], sizes[1:])]
        return self

    def fit_reference(self, X, y, seed=0):
        """Pure NumPy version of fit, kept as a cross-check."""
        n, d = X.shape
        layers = init_weights([d, *self.hidden, 1], seed)
        order_rng = rng(seed, 5)
        for _ in range(self.epochs):
            order = order_rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start:start + self.batch_size]
                _, grads = loss_and_grad(layers, X[batch], y[batch])
                layers = [(W - self.lr * gW, b - self.lr * gb)
                          for (W, b), (gW, gb) in zip(layers, grads)]
        self.layers_ = layers
        return self

    def decision_function(self, X):
        return forward(self.layers_, X)[0]

    def predict_proba(self, X):
        return 0.5 * (1.0 + np.tanh(0.5 * self.decision_function(X)))

    def to_dict(self):
        return {"layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers_]}

    @classmethod
    def from_dict(cls, params, state):
        model = cls(**params)
        model.layers_ = [(np.asarray(l["W"], float), np.asarray(l["b"], float))
                         for l in state["layers"]]
        return model
