"""Mutual completion of several incomplete kernel matrices by EM.

Each kernel ``Q_k`` is tied to a shared model matrix ``M`` through the
Gaussian KL divergence. With ``M`` fixed, the hidden rows/columns of every
``Q_k`` have a closed-form minimizer (the conditional second moments of a
zero-mean Gaussian with covariance ``M``); with the kernels fixed, the best
``M`` is their ``lam``-regularized mean. Alternating the two never increases
the objective ``lam KL(I, M) + sum_k KL(Q_k, M)``.

Example
-------
>>> import numpy as np
>>> from mkmc import KernelSet, SymmetricKernel, run
>>> x = np.random.default_rng(0).normal(size=(6, 6))
>>> q = SymmetricKernel(x @ x.T, mask=[1, 1, 1, 1, 0, 1])
>>> done, trace = run(KernelSet([q, SymmetricKernel(x @ x.T)]))
>>> trace.converged
True
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .divergence import ObjectiveValue, objective
from .errors import ConvergenceError, DimensionMismatch, NotPositiveDefinite
from .symmat import (
    JITTER_DOUBLINGS,
    JITTER_SCALE,
    SymmetricKernel,
    cholesky_logdet,
    partition_view,
    solve_spd,
    symmetrize,
)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1e-3


class KernelSet:
    """``K`` kernels over the same ``l`` objects, plus the model matrix.

    Parameters
    ----------
    kernels : sequence of SymmetricKernel or arrays
        Arrays are wrapped as fully observed kernels.
    model : ndarray, optional
        The shared model matrix ``M``; ``None`` until initialized.
    lam : float
        Weight of the ``KL(I, M)`` prior term. Must be >= 0.
    """

    def __init__(self, kernels, model=None, lam=DEFAULT_LAMBDA):
        ks = [k if isinstance(k, SymmetricKernel) else SymmetricKernel(k) for k in kernels]
        if not ks:
            raise ValueError("a KernelSet needs at least one kernel")
        ell = ks[0].dim
        for i, k in enumerate(ks):
            if k.dim != ell:
                raise DimensionMismatch(ell, k.dim, what=f"kernel {i}")
        if lam < 0:
            raise ValueError("lam must be >= 0")
        if model is not None:
            model = symmetrize(model)
            if model.shape != (ell, ell):
                raise DimensionMismatch((ell, ell), model.shape, what="model")
        self.kernels = ks
        self.model = model
        self.lam = float(lam)

    @property
    def K(self):
        return len(self.kernels)

    @property
    def dim(self):
        return self.kernels[0].dim

    @property
    def masks(self):
        return [k.mask for k in self.kernels]

    def arrays(self):
        return [k.values for k in self.kernels]

    def replace(self, kernels=None, model=None, lam=None):
        return KernelSet(
            self.kernels if kernels is None else kernels,
            self.model if model is None else model,
            self.lam if lam is None else lam,
        )

    def __len__(self):
        return len(self.kernels)

    def __iter__(self):
        return iter(self.kernels)

    def __getitem__(self, i):
        return self.kernels[i]

    def __repr__(self):
        return f"KernelSet(K={self.K}, dim={self.dim}, lam={self.lam}, model={'set' if self.model is not None else None})"


@dataclass(frozen=True)
class MkmcConfig:
    lam: float = DEFAULT_LAMBDA
    tol: float = 1e-6
    max_iters: int = 200
    threads: int = 1
    jitter_scale: float = JITTER_SCALE
    jitter_doublings: int = JITTER_DOUBLINGS
    # also require every matrix to move by less than tol in the last pass
    strict: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def jitter(self):
        return {"jitter_scale": self.jitter_scale, "max_doublings": self.jitter_doublings}


class StopReason(str, enum.Enum):
    TOLERANCE = "tolerance"
    # J infinite (singular visible block); stopped on the reduced objective
    REDUCED_TOLERANCE = "reduced_tolerance"
    MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: ObjectiveValue
    max_block_delta: float
    model_delta: float


@dataclass
class CompletionTrace:
    """Per-iteration record of a run. Entry 0 is the initialization."""

    iterations: list = field(default_factory=list)
    converged: bool = False
    stop_reason: StopReason | None = None

    @property
    def n_iter(self):
        return max(len(self.iterations) - 1, 0)

    @property
    def objective_values(self):
        return np.array([r.objective.total for r in self.iterations])

    @property
    def reduced_values(self):
        return np.array([r.objective.reduced_total for r in self.iterations])

    def is_monotone(self, rtol=1e-9, reduced=False):
        """True when no finite objective value rises above its predecessor."""
        j = self.reduced_values if reduced else self.objective_values
        for prev, cur in zip(j[:-1], j[1:]):
            if math.isfinite(prev) and cur > prev + rtol * max(1.0, abs(prev)):
                return False
        return True


def _combine(arrays, lam):
    total = np.zeros_like(arrays[0], dtype=float)
    for a in arrays:
        total += a
    total[np.diag_indices_from(total)] += lam
    return symmetrize(total / (lam + len(arrays)))


def m_step(kernels, lam=None):
    """Model matrix ``(lam I + sum_k Q_k) / (lam + K)``.

    ``kernels`` is a KernelSet (its ``lam`` is used unless given) or a
    sequence of fully populated matrices.
    """
    if lam is None:
        lam = getattr(kernels, "lam", None)
        if lam is None:
            raise TypeError("lam is required when kernels is not a KernelSet")
    ks = getattr(kernels, "kernels", kernels)
    arrays = [np.asarray(getattr(k, "values", k), dtype=float) for k in ks]
    return _combine(arrays, float(lam))


def _zero_fill(kernel):
    if kernel.n_hidden == 0:
        return kernel
    keep = np.outer(kernel.mask, kernel.mask)
    return kernel.replace(values=np.where(keep, kernel.values, 0.0))


def initialize(kernels):
    """Zero-fill every hidden row/column and set ``M`` by :func:`m_step`."""
    filled = [_zero_fill(k) for k in kernels.kernels]
    return KernelSet(filled, model=m_step(filled, kernels.lam), lam=kernels.lam)


def _e_step(kernel, model, p, jitter):
    # returns the updated kernel and M_{h|v}, which equals Q/Q_vv afterwards
    if p.dim != kernel.dim:
        raise DimensionMismatch(kernel.dim, p.dim, what="partition")
    if p.m == 0:
        return kernel, np.zeros((0, 0))
    model = np.asarray(model, dtype=float)
    if p.n == 0:
        m = symmetrize(model)
        return kernel.replace(values=m), m

    v, h = p.visible, p.hidden
    mb = partition_view(model, p)
    q = np.array(kernel.values, copy=True)
    q_vv = q[np.ix_(v, v)]

    factor, _ = cholesky_logdet(mb.vv, **jitter)
    a = solve_spd(None, mb.vh, factor=factor)
    schur = symmetrize(mb.hh - mb.vh.T @ a)
    q_vh = q_vv @ a
    # Aᵀ Q_vv A == Q_vhᵀ A
    q_hh = symmetrize(schur + q_vh.T @ a)

    q[np.ix_(v, h)] = q_vh
    q[np.ix_(h, v)] = q_vh.T
    q[np.ix_(h, h)] = q_hh
    return kernel.replace(values=q), schur


def e_step(kernel, model, p=None, **jitter):
    """Closed-form estimate of a kernel's hidden blocks given the model.

    With ``A = M_vv^-1 M_vh``::

        Q_vh = Q_vv A
        Q_hh = (M_hh - M_hv A) + A^T Q_vv A

    The visible block is returned untouched. A kernel with no visible
    objects is replaced by ``M`` wholesale.
    """
    p = kernel.partition() if p is None else p
    return _e_step(kernel, model, p, jitter)[0]


def _rel_change(new, old):
    denom = np.linalg.norm(old)
    diff = np.linalg.norm(new - old)
    if denom == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / denom


def _sweep(kernels, model, parts, jitter, pool, iteration):
    def one(k):
        try:
            return _e_step(kernels[k], model, parts[k], jitter)
        except NotPositiveDefinite as exc:
            raise ConvergenceError(
                f"iteration {iteration}, kernel {k}: model block is not positive definite "
                f"(pivot {exc.pivot})",
                iteration=iteration,
                index=k,
            ) from exc

    idx = range(len(kernels))
    out = [one(k) for k in idx] if pool is None else list(pool.map(one, idx))
    return [q for q, _ in out], [s for _, s in out]


def _cond_logdet(schur):
    if schur.shape[0] == 0:
        return 0.0
    try:
        return cholesky_logdet(schur, jitter=False)[1]
    except NotPositiveDefinite:
        return -math.inf


def _converged(prev, cur, tol):
    """Relative change of J, or of the reduced objective while J is infinite."""
    if prev.finite and cur.finite:
        a, b, reason = prev.total, cur.total, StopReason.TOLERANCE
    elif prev.reduced_finite and cur.reduced_finite:
        a, b, reason = prev.reduced_total, cur.reduced_total, StopReason.REDUCED_TOLERANCE
    else:
        return None
    return reason if abs(b - a) / max(1.0, abs(a)) < tol else None


def run(kernels, cfg=None, *, callback=None):
    """Alternate E- and M-steps until the objective settles.

    Stops when ``|J_t - J_{t-1}| / max(1, |J_{t-1}|) < tol``. A kernel whose
    visible block is singular (e.g. a linear kernel with fewer features than
    objects) makes ``J`` infinite at every iterate; the same test is then
    applied to the reduced objective, which differs from ``J`` only by the
    constant ``-sum_k logdet Q_vv / 2``. With ``cfg.strict`` the relative
    Frobenius change of every kernel and of ``M`` must also be below ``tol``.

    Parameters
    ----------
    kernels : KernelSet
        Masks mark the observed objects of each kernel; values at hidden
        positions are ignored.
    cfg : MkmcConfig, optional
        ``cfg.lam`` overrides ``kernels.lam``.
    callback : callable, optional
        Called with each :class:`IterationRecord` as it is produced.

    Returns
    -------
    completed : KernelSet
        Completed kernels (original masks kept) and the final model.
    trace : CompletionTrace
    """
    cfg = MkmcConfig() if cfg is None else cfg
    jitter = cfg.jitter
    state = initialize(kernels.replace(lam=cfg.lam))
    parts = [k.partition() for k in state.kernels]
    qs, model = state.kernels, state.model

    trace = CompletionTrace()

    def record(it, obj, dq, dm):
        rec = IterationRecord(it, obj, dq, dm)
        trace.iterations.append(rec)
        if callback is not None:
            callback(rec)

    # zero-filled hidden blocks have a zero Schur complement
    prev = objective(qs, model, cfg.lam, [0.0 if p.m == 0 else -math.inf for p in parts])
    record(0, prev, math.nan, math.nan)

    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 and len(qs) > 1 else None
    try:
        for it in range(1, cfg.max_iters + 1):
            new_qs, schurs = _sweep(qs, model, parts, jitter, pool, it)
            new_model = m_step(new_qs, cfg.lam)
            dq = max(_rel_change(n.values, o.values) for n, o in zip(new_qs, qs))
            dm = _rel_change(new_model, model)
            qs, model = new_qs, new_model
            try:
                cur = objective(qs, model, cfg.lam, [_cond_logdet(s) for s in schurs])
            except NotPositiveDefinite as exc:
                raise ConvergenceError(
                    f"iteration {it}: model matrix is not positive definite", iteration=it
                ) from exc
            record(it, cur, dq, dm)

            reason = _converged(prev, cur, cfg.tol)
            if reason is not None and (not cfg.strict or max(dq, dm) < cfg.tol):
                trace.converged, trace.stop_reason = True, reason
                break
            prev = cur
        else:
            trace.stop_reason = StopReason.MAX_ITERS
    finally:
        if pool is not None:
            pool.shutdown()

    logger.debug("mkmc stopped after %d iterations (%s)", trace.n_iter, trace.stop_reason)
    return KernelSet(qs, model=model, lam=cfg.lam), trace


def complete(kernels, lam=DEFAULT_LAMBDA, **kw):
    """Shorthand for ``run(kernels, MkmcConfig(lam=lam, **kw))``."""
    return run(kernels, replace(MkmcConfig(), lam=lam, **kw))
