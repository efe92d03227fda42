"""Linear one-vs-rest SVM trained by stochastic subgradient descent.

For each class ``c`` the objective is::

    lambda/2 * |w_c|^2 + mean_i max(0, 1 - y_ic * (w_c . x_i + b_c))

with ``y_ic = +1`` for members of ``c`` and ``-1`` otherwise. Features are
standardized with training-set statistics that are stored in the model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SvmError(ValueError):
    pass


@dataclass
class SvmModel:
    W: np.ndarray
    b: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    lam: float
    metadata: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def scores(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise SvmError(f"feature dimension {x.shape[-1]} != model dimension {self.dim}")
        z = (x - self.mean.astype(np.float64)) / self.scale.astype(np.float64)
        return z @ self.W.astype(np.float64).T + self.b.astype(np.float64)

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.scores(features), axis=-1)


def svm_train(features, labels, lam: float = 1e-4, epochs: int = 20, seed: int = 0,
              batch_size: int = 32, eta0: float = 0.1, num_classes: int | None = None) -> SvmModel:
    """Fit the one-vs-rest hinge objective by minibatch subgradient steps.

    The step size decays as ``eta0 / (1 + eta0 * lam * t)``; the returned
    weights are the average of the iterates over the last half of training.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise SvmError("features must be (n, D) with one label per row")
    if len(np.unique(y)) < 2:
        raise SvmError("SVM training needs at least two classes")
    k = int(num_classes or y.max() + 1)
    mean = x.mean(axis=0).astype(np.float32)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12 * max(1.0, np.abs(x).max()), scale, 1.0).astype(np.float32)
    z = (x - mean.astype(np.float64)) / scale.astype(np.float64)
    n, d = z.shape
    target = -np.ones((n, k))
    target[np.arange(n), y] = 1.0
    rng = np.random.default_rng(seed)
    W = np.zeros((k, d))
    b = np.zeros(k)
    W_avg, b_avg, n_avg = np.zeros_like(W), np.zeros_like(b), 0
    t = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            zb, tb = z[idx], target[idx]
            margin = tb * (zb @ W.T + b)
            coef = np.where(margin < 1.0, tb, 0.0) / len(idx)
            eta = eta0 / (1.0 + eta0 * lam * t)
            W -= eta * (lam * W - coef.T @ zb)
            b += eta * coef.sum(axis=0)
            t += 1
            if epoch >= epochs // 2:
                W_avg += W
                b_avg += b
                n_avg += 1
    W, b = W_avg / n_avg, b_avg / n_avg
    hinge = np.maximum(0.0, 1.0 - target * (z @ W.T + b)).mean(axis=0)
    obj = 0.5 * lam * np.sum(W * W, axis=1) + hinge
    return SvmModel(W.astype(np.float32), b.astype(np.float32), mean, scale, float(lam),
                    {"epochs": epochs, "seed": seed, "batch_size": batch_size, "eta0": eta0,
                     "objective": obj.tolist()})


def svm_predict(model: SvmModel, feature):
    """Return ``(label, scores)``; ties go to the lowest class id."""
    s = model.scores(feature)
    return np.argmax(s, axis=-1), s


def select_lambda(train_x, train_y, val_x, val_y, lambdas, **kw):
    """Train one model per lambda and keep the best on validation accuracy
    (ties go to the earlier lambda)."""
    best, best_acc = None, -1.0
    for lam in lambdas:
        m = svm_train(train_x, train_y, lam=lam, **kw)
        acc = float(np.mean(m.predict(val_x) == np.asarray(val_y))) if len(val_y) else 0.0
        m.metadata["val_accuracy"] = acc
        if acc > best_acc:
            best, best_acc = m, acc
    return best


def save_svm(model: SvmModel, path) -> None:
    from .formats import write_container
    header = {"lambda": model.lam, "num_classes": model.num_classes, "dim": model.dim,
              "metadata": model.metadata}
    write_container(path, "svm", header,
                    {"W": model.W, "b": model.b, "mean": model.mean, "scale": model.scale})


def load_svm(path) -> SvmModel:
    from .formats import read_container
    _, header, t = read_container(path, "svm")
    return SvmModel(t["W"], t["b"], t["mean"], t["scale"], header["lambda"],
                    header.get("metadata", {}))
