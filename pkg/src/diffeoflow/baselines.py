"""Reference classifiers for the comparison protocol.

Penalized logistic regression (the same linear model the flow trains
against), k-nearest-neighbor voting, and a shared evaluation helper
producing error rates with per-class confusion counts.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .objective import (LabeledSet, ThetaParams, softmax_prob, terminal_loss,
                        theta_gradient)
from .optim import minimize_pr_cg
from .pipeline import ModelArtifact
from .pipeline import predict as model_predict

__all__ = ["logistic_fit", "logistic_predict", "knn_predict", "evaluate",
           "EvalResult"]


def logistic_fit(data, lam=1.0, theta0=None, max_iter=500, grad_tol=1e-10):
    """Minimize lam |theta|^2 + Gamma(theta) over the free rows.

    Row 0 stays pinned at zero, matching the softmax parameterization used
    by the flow's terminal classifier.  Deterministic from the data.
    """
    if data.n_classes < 2:
        raise ValueError("logistic_fit needs at least two classes")
    c, d = data.n_classes, data.dim
    if theta0 is None:
        theta0 = ThetaParams.zeros(c, d)
    elif theta0.theta.shape != (c, d):
        raise ValueError("theta0 shape does not match the data")

    def unpack(x):
        full = np.zeros((c, d))
        full[1:] = x.reshape(c - 1, d)
        return ThetaParams(full)

    def fun_grad(x):
        theta = unpack(x)
        val = lam * theta.norm2() + terminal_loss(theta, data)
        grad = theta_gradient(theta, data, lam)
        return val, grad[1:].ravel()

    x, _, _ = minimize_pr_cg(fun_grad, theta0.theta[1:].ravel(),
                             max_iter=max_iter, grad_tol=grad_tol)
    return unpack(x)


def logistic_predict(theta, points):
    """Most probable class per row; argmax breaks exact ties downward."""
    p = softmax_prob(theta, np.asarray(points, dtype=np.float64))
    return np.argmax(p, axis=1).astype(np.int64)


def knn_predict(train, queries, k=5):
    """Majority vote among the k Euclidean-nearest training points.

    Vote ties go to the class with the smallest mean distance inside the
    neighborhood, then to the smallest label.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    n = len(train)
    if not 1 <= k <= n:
        raise ValueError("k must be between 1 and the training size")
    dist = cdist(queries, train.points)
    # stable sort: equidistant neighbors resolve by training index
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    out = np.empty(len(queries), dtype=np.int64)
    for i, idx in enumerate(order):
        votes = train.labels[idx]
        counts = np.bincount(votes)
        top = np.flatnonzero(counts == counts.max())
        if len(top) > 1:
            means = [dist[i, idx[votes == lab]].mean() for lab in top]
            top = top[np.flatnonzero(means == np.min(means))]
        out[i] = top[0]
    return out


@dataclass(frozen=True)
class EvalResult:
    """Misclassification rate plus confusion[i, j] = true i predicted j."""

    error: float
    confusion: np.ndarray

    @property
    def n(self):
        return int(self.confusion.sum())


def evaluate(predictor, test):
    """Error rate of a predictor on a labeled test set.

    ``predictor`` may be a fitted ModelArtifact, a ThetaParams linear
    classifier, or an already-computed label array aligned with ``test``.
    """
    if isinstance(predictor, ModelArtifact):
        predicted = model_predict(predictor, test.points)[0]
    elif isinstance(predictor, ThetaParams):
        predicted = logistic_predict(predictor, test.points)
    else:
        predicted = np.asarray(predictor, dtype=np.int64)
        if predicted.shape != test.labels.shape:
            raise ValueError("predicted labels do not align with the test set")
    c = int(max(test.labels.max(), predicted.max())) + 1
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (test.labels, predicted), 1)
    error = float(np.mean(predicted != test.labels))
    return EvalResult(error=error, confusion=confusion)
