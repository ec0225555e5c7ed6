"""Dense symmetric matrices with a visible/hidden object partition.

Every kernel matrix in this package is an ``l x l`` dense array together with
a boolean mask over objects: ``mask[i]`` is True when row and column ``i`` are
observed. The helpers here give block access under such a split and the
Cholesky-based primitives (log-determinant, SPD solve, Schur complement)
used by the completion and divergence code.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

from .errors import (
    AsymmetricMatrix,
    DimensionMismatch,
    NotPositiveDefinite,
    NotPositiveSemidefinite,
)

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-8
PSD_RTOL = 1e-8
JITTER_SCALE = 1e-10
JITTER_DOUBLINGS = 8


def symmetrize(a):
    """Return ``(a + a.T) / 2``; exact for inputs that are already symmetric."""
    a = np.asarray(a, dtype=float)
    return (a + a.T) / 2.0


def min_eig_ratio(a):
    """Smallest eigenvalue divided by the largest (0 for an all-zero matrix)."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    w = np.linalg.eigvalsh(a)
    top = max(abs(w[-1]), abs(w[0]))
    if top == 0.0:
        return 0.0
    return w[0] / top


def is_psd(a, rtol=PSD_RTOL):
    """True when the smallest eigenvalue is >= ``-rtol`` times the largest."""
    return min_eig_ratio(a) >= -rtol


class SymmetricKernel:
    """A symmetric ``l x l`` kernel matrix with per-object visibility.

    Parameters
    ----------
    values : array_like, shape (l, l)
        Matrix entries. Entries in hidden rows/columns are kept as given (so
        a "truth" matrix can carry its own mask), except that NaNs there are
        replaced with 0.
    mask : array_like of bool, shape (l,), optional
        True where the object's row/column is observed. Defaults to all True.
    check_psd : bool
        Raise :class:`NotPositiveSemidefinite` when the observed block has an
        eigenvalue below ``-PSD_RTOL`` times the largest one.
    """

    __slots__ = ("values", "mask")

    def __init__(self, values, mask=None, *, check_psd=False, symmetry_rtol=SYMMETRY_RTOL):
        values = np.array(values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionMismatch("square matrix", values.shape)
        ell = values.shape[0]
        if ell < 1:
            raise DimensionMismatch(">= 1", ell)
        if mask is None:
            mask = np.ones(ell, dtype=bool)
        else:
            mask = np.array(mask, dtype=bool, copy=True).reshape(-1)
        if mask.shape[0] != ell:
            raise DimensionMismatch(ell, mask.shape[0], what="mask")

        nan = np.isnan(values)
        if nan.any():
            bad = nan & np.outer(mask, mask)
            if bad.any():
                i, j = np.argwhere(bad)[0]
                raise ValueError(f"NaN at observed entry ({i}, {j})")
            values[nan] = 0.0
        if not np.isfinite(values).all():
            raise ValueError("kernel values must be finite")

        scale = np.abs(values).max()
        if scale > 0 and np.abs(values - values.T).max() > symmetry_rtol * scale:
            raise AsymmetricMatrix(
                f"matrix is not symmetric (max |A - A^T| = {np.abs(values - values.T).max():.3g})"
            )
        values = symmetrize(values)
        values.flags.writeable = False
        mask.flags.writeable = False
        self.values = values
        self.mask = mask
        if check_psd and not self.observed_is_psd():
            raise NotPositiveSemidefinite("observed block has a negative eigenvalue")

    @property
    def dim(self):
        return self.values.shape[0]

    @property
    def n_observed(self):
        return int(self.mask.sum())

    @property
    def n_hidden(self):
        return self.dim - self.n_observed

    def partition(self):
        return Partition.from_mask(self.mask)

    def observed_block(self):
        idx = np.flatnonzero(self.mask)
        return self.values[np.ix_(idx, idx)]

    def observed_is_psd(self, rtol=PSD_RTOL):
        return is_psd(self.observed_block(), rtol)

    def replace(self, values=None, mask=None):
        """New kernel with some fields swapped out."""
        return SymmetricKernel(
            self.values if values is None else values,
            self.mask if mask is None else mask,
        )

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __repr__(self):
        return f"SymmetricKernel(dim={self.dim}, n_observed={self.n_observed})"


@dataclass(frozen=True, eq=False)
class Partition:
    """Split of ``range(l)`` into visible and hidden index lists."""

    visible: np.ndarray
    hidden: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.visible, dtype=np.intp).reshape(-1)
        h = np.asarray(self.hidden, dtype=np.intp).reshape(-1)
        for name, a in (("visible", v), ("hidden", h)):
            if a.size > 1 and np.any(np.diff(a) <= 0):
                raise ValueError(f"{name} indices must be strictly increasing")
        ell = v.size + h.size
        seen = np.zeros(ell, dtype=int)
        both = np.concatenate([v, h])
        if both.size and (both.min() < 0 or both.max() >= ell):
            raise ValueError("partition indices must cover 0..l-1 exactly")
        np.add.at(seen, both, 1)
        if np.any(seen != 1):
            raise ValueError("visible and hidden must be disjoint and cover 0..l-1")
        v.flags.writeable = False
        h.flags.writeable = False
        object.__setattr__(self, "visible", v)
        object.__setattr__(self, "hidden", h)

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        return cls(np.flatnonzero(mask), np.flatnonzero(~mask))

    @property
    def dim(self):
        return self.visible.size + self.hidden.size

    @property
    def n(self):
        return self.visible.size

    @property
    def m(self):
        return self.hidden.size

    def mask(self):
        out = np.zeros(self.dim, dtype=bool)
        out[self.visible] = True
        return out


@dataclass
class BlockView:
    """The ``vv``, ``vh`` and ``hh`` blocks of a matrix under a partition."""

    vv: np.ndarray
    vh: np.ndarray
    hh: np.ndarray

    @property
    def hv(self):
        return self.vh.T


def partition_view(matrix, p):
    """Blocks of ``matrix`` at (visible x visible), (visible x hidden), (hidden x hidden).

    ``matrix`` may be a :class:`SymmetricKernel` or a square array. The
    matrix itself is never permuted; blocks are gathered by index.
    """
    a = np.asarray(matrix.values if isinstance(matrix, SymmetricKernel) else matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != p.dim:
        raise DimensionMismatch(p.dim, a.shape)
    v, h = p.visible, p.hidden
    return BlockView(a[np.ix_(v, v)], a[np.ix_(v, h)], a[np.ix_(h, h)])


def assemble(view, p):
    """Inverse of :func:`partition_view`."""
    out = np.empty((p.dim, p.dim))
    v, h = p.visible, p.hidden
    out[np.ix_(v, v)] = view.vv
    out[np.ix_(v, h)] = view.vh
    out[np.ix_(h, v)] = view.vh.T
    out[np.ix_(h, h)] = view.hh
    return out


def _potrf(a):
    c, info = dpotrf(a, lower=1, clean=1, overwrite_a=0)
    return c, info


def cholesky_logdet(matrix, *, jitter=True, jitter_scale=JITTER_SCALE,
                    max_doublings=JITTER_DOUBLINGS):
    """Lower Cholesky factor and log-determinant of a symmetric matrix.

    If the plain factorization fails and ``jitter`` is set, ``eps * I`` is
    added with ``eps = jitter_scale * trace / l``, doubling ``eps`` up to
    ``max_doublings`` times. The returned log-determinant is that of the
    matrix actually factored.

    Returns
    -------
    factor : ndarray
        Lower-triangular ``L`` with ``L @ L.T`` equal to the (jittered) matrix.
    logdet : float

    Raises
    ------
    NotPositiveDefinite
        With the zero-based index of the failing pivot.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch("square matrix", a.shape)
    ell = a.shape[0]
    if ell == 0:
        return np.zeros((0, 0)), 0.0
    c, info = _potrf(a)
    if info != 0 and jitter:
        tr = np.trace(a)
        eps = jitter_scale * (tr / ell if tr > 0 else 1.0)
        for _ in range(max_doublings + 1):
            c, info = _potrf(a + eps * np.eye(ell))
            if info == 0:
                logger.debug("cholesky succeeded with jitter %.3g", eps)
                break
            eps *= 2.0
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    return c, 2.0 * np.sum(np.log(np.diag(c)))


def logdet_spd(matrix, **kw):
    return cholesky_logdet(matrix, **kw)[1]


def solve_spd(matrix, rhs, *, factor=None, **kw):
    """Solve ``matrix @ x = rhs`` for SPD ``matrix`` via Cholesky.

    ``factor`` may be a precomputed lower Cholesky factor of ``matrix``.
    """
    rhs = np.asarray(rhs, dtype=float)
    if factor is None:
        factor, _ = cholesky_logdet(matrix, **kw)
    n = factor.shape[0]
    if rhs.shape[0] != n:
        raise DimensionMismatch(n, rhs.shape[0], what="right-hand side")
    if n == 0:
        return np.zeros_like(rhs)
    return cho_solve((factor, True), rhs, check_finite=False)


def inv_spd(matrix, **kw):
    a = np.asarray(matrix, dtype=float)
    return symmetrize(solve_spd(a, np.eye(a.shape[0]), **kw))


def schur_complement(view, **kw):
    """``hh - hv @ inv(vv) @ vh``, the conditional covariance of hidden given visible."""
    if view.vv.shape[0] == 0:
        return np.array(view.hh, dtype=float, copy=True)
    a = solve_spd(view.vv, view.vh, **kw)
    return symmetrize(view.hh - view.vh.T @ a)
