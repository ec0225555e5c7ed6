import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mkmc import KernelSet, LabeledSplit, SymmetricKernel, corr_matrix_distance, evaluate
from mkmc.errors import OneClassOnly, ZeroNorm
from mkmc.evalsuite import roc_score, split_roc, svm_decision, svm_train

from conftest import random_spd
from oracles import roc_pairs


def _split(labels, train, test=None):
    labels = np.asarray(labels)
    if test is None:
        test = np.setdiff1d(np.arange(labels.size), train)
    return LabeledSplit(labels, train, test)


def _blobs(rng, n=60, gamma=0.5):
    y = np.where(np.arange(n) < n // 2, 1, -1)
    x = rng.standard_normal((n, 2)) + 1.2 * y[:, None]
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    return np.exp(-gamma * d2), y


def _kkt_violation(model, k):
    tr = model.train_idx
    y = model.y_train
    f = k[np.ix_(tr, tr)] @ model.coef + model.bias
    yf = y * f
    a, c = model.alphas, model.c
    v = np.zeros_like(a)
    v[a <= 0] = np.maximum(0, 1 - yf[a <= 0])
    v[a >= c] = np.maximum(0, yf[a >= c] - 1)
    free = (a > 0) & (a < c)
    v[free] = np.abs(yf[free] - 1)
    return v.max()


# --- correlation distance ------------------------------------------------------

def test_corr_distance_examples(rng):
    q = [random_spd(rng, 4) for _ in range(2)]
    assert corr_matrix_distance(q, q) == pytest.approx(0.0, abs=1e-14)
    assert corr_matrix_distance(q, [-a for a in q]) == pytest.approx(2.0)
    a = np.diag([1.0, 0.0])
    b = np.diag([0.0, 1.0])
    assert corr_matrix_distance([a, q[0]], [b, q[0]]) == pytest.approx(0.5)


def test_corr_distance_zero_norm():
    with pytest.raises(ZeroNorm):
        corr_matrix_distance([np.eye(2)], [np.zeros((2, 2))])


def test_corr_distance_accepts_kernel_sets(rng):
    t = KernelSet([random_spd(rng, 3)])
    assert corr_matrix_distance(t, t) == pytest.approx(0.0, abs=1e-14)


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_property_corr_distance_scale_invariant(seed, s1, s2):
    rng = np.random.default_rng(seed)
    a, b = random_spd(rng, 4), random_spd(rng, 4)
    d = corr_matrix_distance([a], [b])
    assert corr_matrix_distance([s1 * a], [s2 * b]) == pytest.approx(d, abs=1e-12)
    assert 0.0 <= d <= 2.0


# --- split ------------------------------------------------------------------------

def test_split_validation():
    with pytest.raises(ValueError):
        LabeledSplit(np.array([1, -1, 1]), [0, 1], [1, 2])
    with pytest.raises(ValueError):
        LabeledSplit(np.array([1, 0, 1]), [0, 1], [2])


# --- SVM ------------------------------------------------------------------------

def test_svm_separates_toy_line():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    k = np.outer(x, x)
    split = _split([-1, -1, 1, 1], [0, 1, 2, 3], [])
    model = svm_train(k, split, c=10.0)
    scores = svm_decision(model, k, split.train_idx)
    assert np.all(np.sign(scores) == split.y_train)
    assert model.converged


def test_svm_large_c_zero_hinge():
    x = np.array([[0.0, 1.0], [1.0, 2.0], [3.0, 0.0], [4.0, 1.0]])
    y = np.array([1, 1, -1, -1])
    k = x @ x.T
    model = svm_train(k, _split(y, [0, 1, 2, 3], []), c=1e6, tol=1e-6)
    f = svm_decision(model, k, [0, 1, 2, 3])
    assert np.maximum(0, 1 - y * f).max() < 1e-3


def test_svm_kkt_and_constraints(rng):
    k, y = _blobs(rng)
    split = _split(y, np.arange(60), [])
    model = svm_train(k, split, c=1.0)
    assert model.converged
    assert np.all(model.alphas >= 0) and np.all(model.alphas <= model.c)
    assert abs(model.alphas @ model.y_train) < 1e-6
    assert _kkt_violation(model, k) < 1e-3 * 2


def test_svm_matches_qp_oracle(rng):
    cvxopt = pytest.importorskip("cvxopt")
    k, y = _blobs(rng)
    split = _split(y, np.arange(60), [])
    model = svm_train(k, split, c=1.0, tol=1e-6)
    yy = y.astype(float)
    p = np.outer(yy, yy) * k
    n = yy.size
    cvxopt.solvers.options["show_progress"] = False
    sol = cvxopt.solvers.qp(
        cvxopt.matrix(p), cvxopt.matrix(-np.ones(n)),
        cvxopt.matrix(np.vstack([-np.eye(n), np.eye(n)])),
        cvxopt.matrix(np.concatenate([np.zeros(n), np.ones(n)])),
        cvxopt.matrix(yy[None, :]), cvxopt.matrix(0.0),
    )
    assert model.objective == pytest.approx(sol["primal objective"], abs=1e-3)


def test_svm_margin_of_free_support_vectors(rng):
    k, y = _blobs(rng)
    model = svm_train(k, _split(y, np.arange(60), []), c=1.0)
    free = np.flatnonzero((model.alphas > 1e-8) & (model.alphas < model.c - 1e-8))
    f = svm_decision(model, k, model.train_idx[free])
    assert np.allclose(model.y_train[free] * f, 1.0, atol=1e-2)


def test_svm_decision_edge_cases(rng):
    k, y = _blobs(rng, n=20)
    split = _split(y, np.arange(0, 20, 2))
    model = svm_train(k, split)
    assert svm_decision(model, k, []).shape == (0,)
    sv = model.train_idx[model.support()[0]]
    full = svm_decision(model, k, split.train_idx)
    assert svm_decision(model, k, [sv])[0] == full[list(split.train_idx).index(sv)]
    with pytest.raises(IndexError):
        svm_decision(model, k, [20])


def test_svm_one_class_degenerate():
    split = _split([1, 1, 1, -1], [0, 1, 2], [3])
    model = svm_train(np.eye(4), split)
    assert model.degenerate
    scores = svm_decision(model, np.eye(4), [0, 1, 2, 3])
    assert len(set(np.sign(scores))) == 1


def test_svm_indefinite_kernel_accepted(rng):
    k, y = _blobs(rng, n=30)
    k = k - 0.6 * np.eye(30)
    assert np.linalg.eigvalsh(k).min() < 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = svm_train(k, _split(y, np.arange(30), []), max_iter=2000)
    assert np.all(model.alphas >= 0) and np.all(model.alphas <= model.c)


def test_svm_iteration_cap_warns(rng):
    k, y = _blobs(rng)
    with pytest.warns(RuntimeWarning):
        model = svm_train(k, _split(y, np.arange(60), []), max_iter=2)
    assert not model.converged and model.n_iter == 2


# --- ROC ------------------------------------------------------------------------------

def test_roc_examples():
    assert roc_score([0.1, 0.2, 0.8, 0.9], [-1, -1, 1, 1]) == 1.0
    assert roc_score([0.5] * 6, [1, -1, 1, -1, 1, -1]) == 0.5
    s = [0.3, 0.3, 0.1, 0.7, 0.7, 0.2]
    lab = [1, -1, -1, 1, -1, 1]
    assert roc_score(s, lab) == roc_pairs(s, lab)


def test_roc_one_class():
    with pytest.raises(OneClassOnly):
        roc_score([1.0, 2.0], [1, 1])


@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=40))
def test_property_roc_pairs_and_symmetry(rows):
    s = np.array([r[0] for r in rows], dtype=float)
    lab = np.array([1 if r[1] else -1 for r in rows])
    if len(set(lab)) < 2:
        return
    auc = roc_score(s, lab)
    assert auc == roc_pairs(s, lab)
    assert roc_score(-s, lab) == pytest.approx(1.0 - auc, abs=1e-12)
    assert roc_score(np.exp(s / 3.0) * 2 + 1, lab) == auc


# --- evaluate --------------------------------------------------------------------------

def test_evaluate_report(rng):
    k, y = _blobs(rng, n=40)
    truth = KernelSet([SymmetricKernel(k), SymmetricKernel(k + 0.1 * np.eye(40))])
    split = _split(y, np.arange(0, 40, 2))
    rep = evaluate(truth, truth, split, seed=3, method="mkmc", ratio=0.5)
    assert rep.mean_corr_distance == pytest.approx(0.0, abs=1e-12)
    assert len(rep.roc_per_matrix) == 2 and 0 <= rep.roc_model <= 1
    assert rep.roc_per_matrix[0] == split_roc(k, split)
    rows = rep.rows()
    assert rows[0][0] == "corr_distance" and rows[1][:2] == ("roc", "M")
    assert (rep.method, rep.ratio, rep.seed) == ("mkmc", 0.5, 3)
