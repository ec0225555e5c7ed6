"""Zero- and mean-imputation of hidden kernel rows/columns.

Both operate on one :class:`SymmetricKernel` at a time, keep the mask and
leave the visible block bit-for-bit unchanged. :func:`impute_set` applies
one of them to every kernel in a set and attaches the combined model matrix.
"""
from __future__ import annotations

import numpy as np

from .completion import KernelSet, _zero_fill, m_step
from .errors import NoObservedData


def zero_impute(kernel):
    """Fill hidden rows and columns with 0."""
    return _zero_fill(kernel)


def mean_impute(kernel):
    """Fill hidden entries with means of the visible Gram block.

    For visible ``j`` and hidden ``h``, ``Q[j, h]`` becomes the mean of row
    ``j`` over visible columns, i.e. the inner product of ``x_j`` with the
    mean visible feature vector. Every hidden-by-hidden entry becomes the
    grand mean of the visible block. Works from Gram entries only.
    """
    if kernel.n_hidden == 0:
        return kernel
    v = np.flatnonzero(kernel.mask)
    h = np.flatnonzero(~kernel.mask)
    if v.size == 0:
        raise NoObservedData("mean imputation needs at least one observed object")
    q = np.array(kernel.values, copy=True)
    q_vv = q[np.ix_(v, v)]
    row_mean = q_vv.mean(axis=1)
    grand = q_vv.mean()
    q[np.ix_(v, h)] = row_mean[:, None]
    q[np.ix_(h, v)] = row_mean[None, :]
    q[np.ix_(h, h)] = grand
    return kernel.replace(values=q)


def combine_model(kernels, lam=None):
    """Model matrix of imputed kernels; same formula as :func:`mkmc.completion.m_step`."""
    return m_step(kernels, lam)


IMPUTERS = {"zero": zero_impute, "mean": mean_impute}


def impute_set(kernels, method="zero", lam=None):
    """Impute every kernel and return a KernelSet with its combined model."""
    try:
        fn = IMPUTERS[method]
    except KeyError:
        raise ValueError(f"unknown imputation method {method!r}; choose from {sorted(IMPUTERS)}") from None
    lam = kernels.lam if lam is None else lam
    filled = [fn(k) for k in kernels.kernels]
    return KernelSet(filled, model=combine_model(filled, lam), lam=lam)
