import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mkmc import (
    KernelSet,
    MkmcConfig,
    StopReason,
    SymmetricKernel,
    complete,
    e_step,
    initialize,
    m_step,
    run,
)
from mkmc.divergence import gaussian_kl, objective
from mkmc.errors import ConvergenceError, DimensionMismatch
from mkmc.symmat import Partition

from conftest import random_kernel_set, random_spd
from oracles import e_step_instance, e_step_numeric, m_step_min_gap, random_spd_perturbation


def min_eig_ratio(a):
    w = np.linalg.eigvalsh(a)
    return w.min() / max(abs(w.max()), 1e-300)


# --- KernelSet / config ---------------------------------------------------

def test_kernelset_validation():
    with pytest.raises(DimensionMismatch):
        KernelSet([SymmetricKernel(np.eye(2)), SymmetricKernel(np.eye(3))])
    with pytest.raises(ValueError):
        KernelSet([])
    ks = KernelSet([np.eye(2), np.eye(2)])
    assert ks.K == 2 and ks.dim == 2 and len(ks) == 2


@pytest.mark.parametrize("kw", [{"lam": 0.0}, {"tol": 0.0}, {"max_iters": 0}, {"threads": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        MkmcConfig(**kw)


def test_config_defaults():
    cfg = MkmcConfig()
    assert (cfg.lam, cfg.tol, cfg.max_iters) == (1e-3, 1e-6, 200)


# --- initialize / m_step ----------------------------------------------------

def test_initialize_identity_example():
    out = initialize(KernelSet([np.eye(2)], lam=1.0))
    assert np.allclose(out.model, np.eye(2))


def test_initialize_zero_fills_hidden_object():
    k = SymmetricKernel(np.array([[1.0, 0.3], [0.3, 1.0]]), mask=[True, False])
    out = initialize(KernelSet([k, k], lam=0.0))
    assert np.array_equal(out.kernels[0].values, np.diag([1.0, 0.0]))
    assert np.array_equal(out.model, np.diag([1.0, 0.0]))


def test_initialize_formula(rng):
    ks = random_kernel_set(rng, 3, 6, 0.3)
    out = initialize(ks)
    filled = []
    for k in ks.kernels:
        a = k.values.copy()
        a[~k.mask, :] = 0.0
        a[:, ~k.mask] = 0.0
        filled.append(a)
    expected = (sum(filled) + 1e-3 * np.eye(6)) / (1e-3 + 3)
    assert np.allclose(out.model, expected, atol=1e-14, rtol=0)


def test_m_step_examples(rng):
    q = random_spd(rng, 4)
    assert np.allclose(m_step([q], 0.0), q)
    assert np.allclose(m_step([np.eye(3)], 1.0), np.eye(3))
    with pytest.raises(TypeError):
        m_step([q])


def test_m_step_local_minimum(rng):
    qs = [random_spd(rng, 6) for _ in range(4)]
    assert m_step_min_gap(rng, qs, 1e-3, n_pert=20, eps=1e-4) > 0


# --- e_step ------------------------------------------------------------------

def test_e_step_no_hidden_unchanged(rng):
    k = SymmetricKernel(random_spd(rng, 4))
    assert e_step(k, random_spd(rng, 4)) is k


def test_e_step_block_diagonal_model(rng):
    m = np.zeros((4, 4))
    m[:2, :2] = random_spd(rng, 2)
    m[2:, 2:] = random_spd(rng, 2)
    k = SymmetricKernel(random_spd(rng, 4), mask=[True, True, False, False])
    out = e_step(k, m).values
    assert np.allclose(out[:2, 2:], 0.0)
    assert np.allclose(out[2:, 2:], m[2:, 2:])


def test_e_step_no_visible_returns_model(rng):
    m = random_spd(rng, 3)
    k = SymmetricKernel(np.eye(3), mask=[False] * 3)
    assert np.allclose(e_step(k, m).values, m)


def test_e_step_matches_numeric_minimizer(rng):
    for _ in range(5):
        q, mask, m = e_step_instance(rng)
        got = e_step(SymmetricKernel(q, mask), m).values
        assert np.abs(got - e_step_numeric(q, mask, m)).max() < 1e-6


def test_e_step_optimal_against_perturbations(rng):
    q, mask, m = e_step_instance(rng, ell=7, n_hidden=3)
    best = e_step(SymmetricKernel(q, mask), m).values
    j0 = gaussian_kl(best, m)
    h = ~mask
    for _ in range(50):
        d = rng.standard_normal(best.shape)
        d = (d + d.T) / 2
        d[np.ix_(mask, mask)] = 0.0
        d *= 1e-3 / np.linalg.norm(d)
        alt = best + d
        if np.linalg.eigvalsh(alt).min() <= 0:
            continue
        assert j0 <= gaussian_kl(alt, m) + 1e-8
    assert h.any()


def test_e_step_preserves_visible_and_psd(rng):
    q, mask, m = e_step_instance(rng, ell=8, n_hidden=3)
    out = e_step(SymmetricKernel(q, mask), m).values
    assert np.array_equal(out[np.ix_(mask, mask)], q[np.ix_(mask, mask)])
    assert np.array_equal(out, out.T)
    assert min_eig_ratio(out) >= -1e-8


def test_e_step_partition_mismatch(rng):
    k = SymmetricKernel(np.eye(3), mask=[True, True, False])
    with pytest.raises(DimensionMismatch):
        e_step(k, np.eye(3), Partition([0], [1]))


# --- run -----------------------------------------------------------------------

def test_run_fully_observed_is_identity(rng):
    ks = KernelSet([SymmetricKernel(random_spd(rng, 5)) for _ in range(3)])
    out, trace = run(ks)
    assert trace.converged and trace.n_iter == 1
    for a, b in zip(out.kernels, ks.kernels):
        assert np.array_equal(a.values, b.values)
    assert np.array_equal(out.model, initialize(ks).model)


def test_run_two_by_two_fixed_point():
    q1 = np.array([[1.0, 0.5], [0.5, 1.0]])
    k2 = SymmetricKernel(np.array([[1.0, 0.0], [0.0, 0.0]]), mask=[True, False])
    ks = KernelSet([SymmetricKernel(q1), k2])
    out, trace = run(ks, MkmcConfig(lam=1e-12, tol=1e-15, max_iters=5000, strict=True))
    assert np.allclose(out.kernels[1].values, q1, atol=1e-6)
    # direct check: Q2 = Q1, M = Q1 drives J to its global minimum 0 (as lam -> 0)
    assert objective(out, out.model, 1e-12).total == pytest.approx(0.0, abs=1e-6)


def test_run_random_monotone_and_tolerance(rng):
    ks = random_kernel_set(rng, 3, 20, 0.3)
    cfg = MkmcConfig(max_iters=5000)
    out, trace = run(ks, cfg)
    assert trace.converged and trace.stop_reason is StopReason.TOLERANCE
    assert trace.is_monotone()
    j = trace.objective_values
    assert abs(j[-1] - j[-2]) / max(1.0, abs(j[-2])) < cfg.tol


def test_run_visible_preserved_psd_symmetric(rng):
    ks = random_kernel_set(rng, 4, 15, 0.4)
    out, _ = run(ks, MkmcConfig(max_iters=30))
    for a, b in zip(out.kernels, ks.kernels):
        v = b.mask
        assert np.array_equal(a.values[np.ix_(v, v)], b.values[np.ix_(v, v)])
        assert np.array_equal(a.values, a.values.T)
        assert min_eig_ratio(a.values) >= -1e-8
        assert np.array_equal(a.mask, b.mask)
    assert np.linalg.eigvalsh(out.model).min() > 0


def test_run_psd_every_iteration(rng):
    ks = random_kernel_set(rng, 3, 10, 0.5)
    for iters in (1, 2, 5):
        out, _ = run(ks, MkmcConfig(max_iters=iters))
        assert all(min_eig_ratio(k.values) >= -1e-8 for k in out.kernels)


def test_run_permutation_equivariance(rng):
    ks = random_kernel_set(rng, 3, 12, 0.3)
    perm = rng.permutation(12)
    permuted = KernelSet([SymmetricKernel(k.values[np.ix_(perm, perm)], k.mask[perm])
                          for k in ks.kernels])
    cfg = MkmcConfig(max_iters=50)
    a, _ = run(ks, cfg)
    b, _ = run(permuted, cfg)
    for x, y in zip(a.kernels, b.kernels):
        assert np.allclose(x.values[np.ix_(perm, perm)], y.values, atol=1e-10, rtol=0)


def test_run_strict_reaches_fixed_point(rng):
    ks = random_kernel_set(rng, 3, 10, 0.3)
    cfg = MkmcConfig(strict=True, max_iters=20000)
    out, trace = run(ks, cfg)
    assert trace.converged
    again = [e_step(k, out.model) for k in out.kernels]
    for x, y in zip(out.kernels, again):
        assert np.linalg.norm(y.values - x.values) / np.linalg.norm(x.values) < 10 * cfg.tol
    m2 = m_step(again, cfg.lam)
    assert np.linalg.norm(m2 - out.model) / np.linalg.norm(out.model) < 10 * cfg.tol


def test_run_threads_bit_identical(rng):
    ks = random_kernel_set(rng, 4, 12, 0.3)
    a, ta = run(ks, MkmcConfig(max_iters=20, threads=1))
    b, tb = run(ks, MkmcConfig(max_iters=20, threads=3))
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a.kernels, b.kernels))
    assert np.array_equal(ta.objective_values, tb.objective_values)


def test_run_callback_and_trace(rng):
    ks = random_kernel_set(rng, 2, 8, 0.25)
    seen = []
    _, trace = run(ks, MkmcConfig(max_iters=3), callback=seen.append)
    assert seen == trace.iterations
    assert [r.iteration for r in seen] == list(range(len(seen)))
    assert math.isnan(seen[0].max_block_delta)


def test_run_max_iters_reason(rng):
    ks = random_kernel_set(rng, 2, 10, 0.5)
    _, trace = run(ks, MkmcConfig(max_iters=2, tol=1e-300))
    assert not trace.converged and trace.stop_reason is StopReason.MAX_ITERS
    assert trace.n_iter == 2


def test_run_rank_deficient_uses_reduced_objective():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((12, 3))
    ks = KernelSet([SymmetricKernel(x @ x.T, mask=rng.random(12) > 0.3) for _ in range(2)])
    out, trace = run(ks, MkmcConfig(max_iters=100))
    assert not np.isfinite(trace.objective_values).any()
    assert trace.is_monotone(reduced=True)
    assert np.isfinite(trace.reduced_values[1:]).all()


def test_run_surfaces_factorization_failure():
    q = np.ones((3, 3))
    k = SymmetricKernel(q, mask=[True, True, False])
    cfg = MkmcConfig(lam=1e-300, jitter_doublings=0, jitter_scale=0.0)
    with pytest.raises(ConvergenceError) as info:
        run(KernelSet([k]), cfg)
    assert info.value.iteration == 1 and info.value.index == 0


def test_complete_shorthand(rng):
    ks = random_kernel_set(rng, 2, 6, 0.3)
    a, _ = complete(ks, lam=1e-3, max_iters=5)
    b, _ = run(ks, MkmcConfig(max_iters=5))
    assert np.array_equal(a.model, b.model)


@given(st.integers(1, 4), st.integers(3, 10), st.floats(0.0, 0.8), st.integers(0, 2**32 - 1))
def test_property_monotone_and_visible(K, ell, frac, seed):
    rng = np.random.default_rng(seed)
    ks = random_kernel_set(rng, K, ell, frac)
    out, trace = run(ks, MkmcConfig(max_iters=40))
    assert trace.is_monotone()
    for a, b in zip(out.kernels, ks.kernels):
        v = b.mask
        assert np.array_equal(a.values[np.ix_(v, v)], b.values[np.ix_(v, v)])


@given(st.integers(0, 2**32 - 1))
def test_property_m_step_optimal(seed):
    rng = np.random.default_rng(seed)
    qs = [random_spd(rng, 4) for _ in range(int(rng.integers(1, 4)))]
    m_star = m_step(qs, 1e-3)
    j_star = objective(qs, m_star, 1e-3).total
    mp = random_spd_perturbation(rng, m_star, 1e-4)
    if np.linalg.eigvalsh(mp).min() > 0:
        assert objective(qs, mp, 1e-3).total >= j_star - 1e-8
