"""Tabular baselines trained on the same preprocessed features: K-nearest
neighbors and a linear one-vs-rest SVM fit by mini-batch subgradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simnet import PairwiseScores, SimilarityMetric


@dataclass
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int
    metric: SimilarityMetric

    def __post_init__(self):
        if self.X.shape[0] == 0:
            raise ValueError("empty training set")
        if not 1 <= self.k <= self.X.shape[0]:
            raise ValueError(f"k={self.k} out of range for {self.X.shape[0]} rows")


@dataclass
class LinearSvmModel:
    W: np.ndarray  # n_classes x d
    b: np.ndarray  # n_classes
    lam: float
    epochs: int
    lr: float


def knn_fit(X: np.ndarray, y: np.ndarray, k: int = 5,
            metric: SimilarityMetric | None = None) -> KnnModel:
    metric = metric or SimilarityMetric("euclidean")
    return KnnModel(np.asarray(X, dtype=np.float64),
                    np.asarray(y, dtype=np.int32), k, metric)


def _query_scores(train: np.ndarray, queries: np.ndarray,
                  metric: SimilarityMetric) -> np.ndarray:
    """Scores of each query row against every training row."""
    nt = train.shape[0]
    stacked = np.vstack([train, queries])
    scores = PairwiseScores(stacked, metric)
    out = np.empty((queries.shape[0], nt))
    for i0 in range(nt, stacked.shape[0], 512):
        i1 = min(i0 + 512, stacked.shape[0])
        out[i0 - nt:i1 - nt] = scores.block(i0, i1)[:, :nt]
    return out


def knn_predict(model: KnnModel, X_query: np.ndarray,
                n_classes: int = 4) -> np.ndarray:
    """Majority vote among the k nearest training rows. Distance ties break
    toward the lower training-row index, vote ties toward the smaller class."""
    Xq = np.atleast_2d(np.asarray(X_query, dtype=np.float64))
    scores = _query_scores(model.X, Xq, model.metric)
    if model.metric.is_similarity:
        scores = -scores  # vote among highest similarities
    order = np.argsort(scores, axis=1, kind="stable")[:, :model.k]
    votes = model.y[order]
    out = np.empty(Xq.shape[0], dtype=np.int32)
    for i in range(Xq.shape[0]):
        out[i] = np.argmax(np.bincount(votes[i], minlength=n_classes))
    return out


def svm_objective(model: LinearSvmModel, X: np.ndarray, y: np.ndarray,
                  n_classes: int = 4) -> float:
    """Full-batch one-vs-rest hinge objective with L2 regularization."""
    total = 0.0
    for c in range(n_classes):
        sign = np.where(y == c, 1.0, -1.0)
        margins = 1.0 - sign * (X @ model.W[c] + model.b[c])
        total += np.maximum(margins, 0.0).mean()
        total += 0.5 * model.lam * float(model.W[c] @ model.W[c])
    return total


def svm_train(X: np.ndarray, y: np.ndarray, lam: float = 1e-4,
              epochs: int = 40, lr: float = 0.05, batch_size: int = 64,
              seed: int = 0, n_classes: int = 4) -> LinearSvmModel:
    """One-vs-rest hinge loss minimized by mini-batch subgradient descent;
    deterministic under the seed."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    n, d = X.shape
    rng = np.random.default_rng(seed)
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    signs = np.where(y[:, None] == np.arange(n_classes)[None, :], 1.0, -1.0)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            Xb = X[idx]
            Sb = signs[idx]  # batch x classes
            margins = 1.0 - Sb * (Xb @ W.T + b[None, :])
            active = (margins > 0.0).astype(np.float64) * Sb
            grad_W = lam * W - (active.T @ Xb) / idx.size
            grad_b = -active.sum(axis=0) / idx.size
            W -= lr * grad_W
            b -= lr * grad_b
            if not np.all(np.isfinite(W)):
                raise FloatingPointError("SVM training diverged")
    return LinearSvmModel(W, b, lam, epochs, lr)


def svm_predict(model: LinearSvmModel, X: np.ndarray) -> np.ndarray:
    scores = np.atleast_2d(X) @ model.W.T + model.b[None, :]
    return scores.argmax(axis=1).astype(np.int32)
