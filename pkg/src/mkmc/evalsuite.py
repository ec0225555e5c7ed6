"""Scoring completed kernels: correlation matrix distance, kernel SVM, ROC score."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import OneClassOnly, ZeroNorm

SVM_TOL = 1e-3
SVM_MAX_ITER = 100_000
TAU = 1e-12


def _arrays(ks):
    ks = getattr(ks, "kernels", ks)
    return [np.asarray(getattr(k, "values", k), dtype=float) for k in ks]


def corr_matrix_distance(truth, estimate):
    """Mean over kernels of ``1 - Tr(Q Q_hat) / (||Q||_F ||Q_hat||_F)``.

    Both arguments are KernelSets or equal-length sequences of matrices.
    The result lies in [0, 2]; 0 means every estimate is a positive
    multiple of its truth.
    """
    ts, es = _arrays(truth), _arrays(estimate)
    if len(ts) != len(es):
        raise ValueError(f"kernel count mismatch: {len(ts)} vs {len(es)}")
    if not ts:
        raise ValueError("need at least one kernel")
    out = []
    for k, (q, qh) in enumerate(zip(ts, es)):
        if q.shape != qh.shape:
            raise ValueError(f"kernel {k}: shape {q.shape} vs {qh.shape}")
        nq, nqh = np.linalg.norm(q), np.linalg.norm(qh)
        if nq == 0.0 or nqh == 0.0:
            raise ZeroNorm(f"kernel {k} has zero Frobenius norm")
        # Tr(Q Q_hat) for symmetric matrices is the elementwise inner product
        out.append(1.0 - float(np.sum(q * qh)) / (nq * nqh))
    return float(np.mean(out))


@dataclass(frozen=True)
class LabeledSplit:
    """Labels in {+1, -1} and disjoint train/test index sets."""

    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        tr = np.asarray(self.train_idx, dtype=np.intp).reshape(-1)
        te = np.asarray(self.test_idx, dtype=np.intp).reshape(-1)
        if np.intersect1d(tr, te).size:
            raise ValueError("train and test indices overlap")
        used = np.concatenate([tr, te])
        if used.size and (used.min() < 0 or used.max() >= labels.size):
            raise IndexError("split index out of range")
        if used.size and not np.isin(labels[used], (-1, 1)).all():
            raise ValueError("labels of split objects must be +1 or -1")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "train_idx", tr)
        object.__setattr__(self, "test_idx", te)

    @property
    def y_train(self):
        return self.labels[self.train_idx].astype(float)

    @property
    def y_test(self):
        return self.labels[self.test_idx].astype(float)


@dataclass
class SvmModel:
    alphas: np.ndarray
    bias: float
    c: float
    train_idx: np.ndarray
    y_train: np.ndarray
    converged: bool = True
    n_iter: int = 0
    objective: float = 0.0
    kkt_gap: float = 0.0
    degenerate: bool = False

    @property
    def coef(self):
        return self.alphas * self.y_train

    def support(self):
        return np.flatnonzero(self.alphas > 0)


def _bias(alpha, g, y, c):
    yg = y * g
    free = (alpha > 0) & (alpha < c)
    if free.any():
        rho = float(yg[free].mean())
    else:
        at_c = alpha >= c
        up = (at_c & (y < 0)) | (~at_c & (y > 0))
        ub = yg[up].min() if up.any() else math.inf
        lb = yg[~up].max() if (~up).any() else -math.inf
        rho = (ub + lb) / 2.0
    return -rho


def svm_train(kernel, split, c=1.0, *, tol=SVM_TOL, max_iter=SVM_MAX_ITER):
    """Train a C-SVM on ``kernel`` restricted to the split's training objects.

    SMO on the dual ``min 1/2 a^T Q a - sum(a)``, ``0 <= a <= c``,
    ``y^T a = 0``, picking the maximal-violating pair each step and stopping
    once the KKT gap ``max(-y G)_up - min(-y G)_low`` falls to ``tol``.
    Indefinite kernels are used as-is. Hitting ``max_iter`` warns and
    returns the current iterate with ``converged=False``.
    """
    if not c > 0:
        raise ValueError("c must be > 0")
    k = np.asarray(getattr(kernel, "values", kernel), dtype=float)
    tr = split.train_idx
    y = split.y_train
    n = tr.size
    if n == 0:
        raise ValueError("empty training set")
    if tr.max() >= k.shape[0]:
        raise IndexError("training index outside kernel")
    ktr = k[np.ix_(tr, tr)]
    if np.all(y == y[0]):
        return SvmModel(np.zeros(n), float(y[0]), c, tr, y, degenerate=True)

    alpha = np.zeros(n)
    g = -np.ones(n)
    diag = np.diag(ktr).copy()
    it = 0
    gap = math.inf
    converged = False
    while True:
        myg = -y * g
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            converged = True
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(myg[up])])
        j = int(np.flatnonzero(low)[np.argmin(myg[low])])
        gap = myg[i] - myg[j]
        if gap <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1

        a = diag[i] + diag[j] - 2.0 * ktr[i, j]
        if a <= 0:
            a = TAU
        d = gap / a
        d = min(d,
                c - alpha[i] if y[i] > 0 else alpha[i],
                alpha[j] if y[j] > 0 else c - alpha[j])
        old_i, old_j = alpha[i], alpha[j]
        alpha[i] = min(max(old_i + y[i] * d, 0.0), c)
        alpha[j] = min(max(old_j - y[j] * d, 0.0), c)
        di, dj = alpha[i] - old_i, alpha[j] - old_j
        g += y * (ktr[:, i] * (y[i] * di) + ktr[:, j] * (y[j] * dj))

    if not converged:
        warnings.warn(f"SMO hit the iteration cap ({max_iter}) with KKT gap {gap:.3g}",
                      RuntimeWarning, stacklevel=2)
    obj = 0.5 * float(alpha @ (g - 1.0))
    return SvmModel(alpha, _bias(alpha, g, y, c), c, tr, y,
                    converged=converged, n_iter=it, objective=obj, kkt_gap=float(gap))


def svm_decision(model, kernel, idx=None):
    """Decision values ``sum_i a_i y_i K(i, j) + b`` for objects ``idx``."""
    k = np.asarray(getattr(kernel, "values", kernel), dtype=float)
    idx = np.asarray([] if idx is None else idx, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        return np.zeros(0)
    if idx.min() < 0 or idx.max() >= k.shape[0]:
        raise IndexError("decision index outside kernel")
    # row-wise sums so a point's score does not depend on which others are scored with it
    return (k[np.ix_(idx, model.train_idx)] * model.coef).sum(axis=1) + model.bias


def roc_score(scores, labels):
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores count one half, using midranks. Labels > 0 are positives.

    Raises
    ------
    OneClassOnly
        If every label falls in the same class.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    pos = np.asarray(labels).reshape(-1) > 0
    if s.size != pos.size:
        raise ValueError("scores and labels differ in length")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC score needs both positive and negative labels")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def split_roc(kernel, split, c=1.0):
    """Train on the split's training objects and score its test objects."""
    model = svm_train(kernel, split, c)
    return roc_score(svm_decision(model, kernel, split.test_idx), split.y_test)


@dataclass
class EvalReport:
    mean_corr_distance: float
    roc_per_matrix: tuple
    roc_model: float
    method: str = ""
    ratio: float = math.nan
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def rows(self):
        """Long-format ``(measure, matrix, value)`` rows."""
        out = [("corr_distance", "all", self.mean_corr_distance), ("roc", "M", self.roc_model)]
        out += [("roc", f"Q{k + 1}", v) for k, v in enumerate(self.roc_per_matrix)]
        return out


def evaluate(truth, estimate, split, c=1.0, *, per_matrix=True, **meta):
    """Completion accuracy and downstream ROC for one completed KernelSet.

    ``estimate.model`` is used for the model-matrix ROC; if absent it is
    recombined from the estimated kernels.
    """
    from .completion import m_step

    dist = corr_matrix_distance(truth, estimate)
    model = getattr(estimate, "model", None)
    if model is None:
        model = m_step(estimate, getattr(estimate, "lam", 1e-3))
    roc_m = split_roc(model, split, c)
    per = tuple(split_roc(q, split, c) for q in _arrays(estimate)) if per_matrix else ()
    return EvalReport(dist, per, roc_m,
                      method=meta.pop("method", ""),
                      ratio=meta.pop("ratio", math.nan),
                      seed=meta.pop("seed", None),
                      meta=meta)
