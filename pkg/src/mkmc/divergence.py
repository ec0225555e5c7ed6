"""KL divergence between zero-mean Gaussians and the penalized completion objective."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import NotPositiveDefinite, QSingular
from .symmat import cholesky_logdet


@dataclass(frozen=True)
class ObjectiveValue:
    """Value of ``lam * KL(I, M) + sum_k KL(Q_k, M)``, in nats.

    ``prior_kl`` is the unweighted ``KL(I, M)``. A kernel without a finite
    log-determinant contributes ``inf`` to ``per_matrix_kl`` and ``total``.

    ``reduced_total`` is the same objective with each ``-logdet Q_vv / 2``
    term left out (those depend on observed data only), so it stays finite
    for rank-deficient kernels. It is NaN unless conditional log-determinants
    were supplied.
    """

    total: float
    per_matrix_kl: tuple
    prior_kl: float
    lam: float
    reduced_total: float = math.nan

    @property
    def reduced_finite(self):
        return math.isfinite(self.reduced_total)

    @property
    def finite(self):
        return math.isfinite(self.total)


def _trace_solve(q, m_factor):
    # Tr(M^-1 Q) from the Cholesky factor of M
    x = cho_solve((m_factor, True), q, check_finite=False)
    return float(np.trace(x))


def _kl_from_factor(q, m_factor, m_logdet, index=None):
    q = np.asarray(q, dtype=float)
    ell = q.shape[0]
    try:
        _, q_logdet = cholesky_logdet(q, jitter=False)
    except NotPositiveDefinite as exc:
        raise QSingular(exc.pivot, index) from None
    return 0.5 * (_trace_solve(q, m_factor) + m_logdet - q_logdet - ell)


def gaussian_kl(q, m):
    """``KL(N(0, q) || N(0, m)) = (Tr(m^-1 q) + logdet m - logdet q - l) / 2``.

    ``m`` is factored with the jitter policy of :func:`cholesky_logdet`;
    ``q`` is factored exactly, since jitter would shift ``logdet q`` by an
    amount unrelated to the data.

    Raises
    ------
    NotPositiveDefinite
        ``m`` could not be factored.
    QSingular
        ``q`` is not positive definite.
    """
    q = np.asarray(q, dtype=float)
    m = np.asarray(m, dtype=float)
    if q.shape != m.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {m.shape}")
    m_factor, m_logdet = cholesky_logdet(m)
    return _kl_from_factor(q, m_factor, m_logdet)


def _as_arrays(kernels):
    ks = getattr(kernels, "kernels", kernels)
    return [np.asarray(getattr(k, "values", k), dtype=float) for k in ks]


def objective(kernels, m, lam, cond_logdets=None):
    """Penalized objective ``J(H, M) = lam KL(I, M) + sum_k KL(Q_k, M)``.

    ``kernels`` is a :class:`~mkmc.completion.KernelSet` or a sequence of
    (fully populated) matrices. Singular kernels are reported as ``inf``
    rather than raising.

    ``cond_logdets[k]``, when given, is ``logdet`` of the Schur complement
    ``Q_hh - Q_hv Q_vv^+ Q_vh`` of kernel ``k`` (0 for a kernel with nothing
    hidden) and is used to fill in ``reduced_total``.
    """
    qs = _as_arrays(kernels)
    m = np.asarray(m, dtype=float)
    ell = m.shape[0]
    m_factor, m_logdet = cholesky_logdet(m)

    m_inv = cho_solve((m_factor, True), np.eye(ell), check_finite=False)
    # KL(I, M): logdet I = 0
    prior = 0.5 * (float(np.trace(m_inv)) + m_logdet - ell)

    per = []
    traces = []
    for k, q in enumerate(qs):
        if q.shape != m.shape:
            raise ValueError(f"kernel {k}: shape {q.shape} does not match model {m.shape}")
        # Tr(M^-1 Q) for symmetric Q
        tr = float(np.sum(m_inv * q))
        traces.append(tr)
        try:
            _, q_logdet = cholesky_logdet(q, jitter=False)
        except NotPositiveDefinite:
            per.append(math.inf)
        else:
            per.append(0.5 * (tr + m_logdet - q_logdet - ell))
    total = lam * prior + math.fsum(per)

    reduced = math.nan
    if cond_logdets is not None:
        if len(cond_logdets) != len(qs):
            raise ValueError("one conditional log-determinant per kernel is required")
        reduced = lam * prior + math.fsum(
            0.5 * (tr + m_logdet - c - ell) for tr, c in zip(traces, cond_logdets)
        )
    return ObjectiveValue(total=total, per_matrix_kl=tuple(per), prior_kl=prior, lam=lam,
                          reduced_total=reduced)
