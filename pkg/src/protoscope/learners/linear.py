"""L2-regularized logistic regression fitted by backtracking gradient descent."""

import numpy as np

GRAD_TOL = 1e-6
MAX_ITER = 5000


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _objective(w, b, X, y, lam):
    z = X @ w + b
    # log(1 + e^z) - y z, summed stably
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * lam * (w @ w)
    r = _sigmoid(z) - y
    return loss, X.T @ r / len(y) + lam * w, r.mean()


class LogisticRegression:
    def __init__(self, l2: float = 0.01):
        self.l2 = float(l2)
        self.coef_ = None
        self.intercept_ = 0.0
        self.n_iter_ = 0

    def fit(self, X, y):
        n, d = X.shape
        w, b = np.zeros(d), 0.0
        loss, gw, gb = _objective(w, b, X, y, self.l2)
        step = 1.0
        for it in range(MAX_ITER):
            gnorm2 = gw @ gw + gb * gb
            if np.sqrt(gnorm2) <= GRAD_TOL:
                break
            step = min(step * 2.0, 1e4)
            while True:
                w_new, b_new = w - step * gw, b - step * gb
                new_loss, new_gw, new_gb = _objective(w_new, b_new, X, y, self.l2)
                if new_loss <= loss - 1e-4 * step * gnorm2 or step < 1e-14:
                    break
                step *= 0.5
            w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        self.n_iter_ = it
        self.coef_, self.intercept_ = w, float(b)
        return self

    def decision_function(self, X):
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return _sigmoid(self.decision_function(X))

    def to_dict(self):
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_}

    @classmethod
    def from_dict(cls, params, state):
        model = cls(**params)
        model.coef_ = np.asarray(state["coef"], float)
        model.intercept_ = float(state["intercept"])
        return model
