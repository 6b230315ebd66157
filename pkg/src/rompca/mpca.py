"""Classical multilinear principal component analysis.

The fit alternates mode-wise eigen updates: each projection matrix is the
dominant eigenbasis of the scatter of the samples partially projected onto
all other modes, which never decreases the captured variation.  Complete
data only; the robust solver handles missing cells.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import batch_expand, batch_project

__all__ = ["MpcaModel", "mpca_fit", "mpca_reconstruct"]


@dataclass
class MpcaModel:
    """Fitted model: orthonormal factors, mean center and per-sample cores."""

    factors: list
    center: np.ndarray
    cores: np.ndarray
    explained_variation: float
    n_iter: int = 0
    converged: bool = True

    @property
    def ranks(self):
        return tuple(f.shape[1] for f in self.factors)


def _fix_eigvec_signs(v):
    # first component of magnitude above tolerance made positive, for
    # reproducible eigenvector orientation
    for j in range(v.shape[1]):
        col = v[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            v[:, j] = -col
    return v


def _top_eigvecs(scatter, k):
    w, v = np.linalg.eigh((scatter + scatter.T) / 2)
    v = v[:, ::-1][:, :k]
    return _fix_eigvec_signs(np.ascontiguousarray(v))


def _mode_scatter(xc, mode):
    # sum over samples of A_n A_n^T for the mode unfolding; column order is
    # irrelevant for the outer product
    b = np.moveaxis(xc, mode + 1, 1).reshape(xc.shape[0], xc.shape[mode + 1], -1)
    return np.einsum("npq,nrq->pr", b, b)


def mpca_fit(data, ranks, max_iter=50, tol=1e-6):
    """Fit MPCA to a stack of complete tensors.

    Parameters
    ----------
    data : ndarray, shape (N, P1, ..., PL)
        Sample tensors stacked along the first axis.
    ranks : sequence of int
        Per-mode subspace dimensions, ``1 <= K_m <= P_m``.
    max_iter : int
        Maximum number of mode sweeps.
    tol : float
        Relative change of the captured variation below which to stop.

    Returns
    -------
    MpcaModel
    """
    data = np.asarray(data, dtype=float)
    if data.ndim < 2:
        raise ValueError("data must be (N, P1, ..., PL)")
    if data.shape[0] == 0:
        raise ValueError("empty sample list")
    if np.isnan(data).any():
        raise ValueError("mpca_fit requires complete data (no NaN)")
    dims = data.shape[1:]
    ranks = tuple(int(k) for k in ranks)
    if len(ranks) != len(dims):
        raise ValueError(f"{len(ranks)} ranks for an order-{len(dims)} tensor")
    for k, p in zip(ranks, dims):
        if not 1 <= k <= p:
            raise ValueError(f"rank {k} out of range [1, {p}]")

    center = data.mean(axis=0)
    xc = data - center
    total = float(np.sum(xc**2))

    factors = [_top_eigvecs(_mode_scatter(xc, m), k) for m, k in enumerate(ranks)]

    def captured():
        return float(np.sum(batch_project(xc, factors) ** 2))

    prev = captured()
    n_iter = 0
    converged = total == 0.0
    for n_iter in range(1, max_iter + 1):
        for m in range(len(dims)):
            partial = batch_project(xc, factors, skip=m)
            factors[m] = _top_eigvecs(_mode_scatter(partial, m), ranks[m])
        cur = captured()
        if prev > 0 and (cur - prev) <= tol * prev:
            converged = True
            prev = cur
            break
        prev = cur

    cores = batch_project(xc, factors)
    explained = prev / total if total > 0 else 1.0
    return MpcaModel(factors, center, cores, explained, n_iter, converged)


def mpca_reconstruct(model, n=None):
    """Reconstruct sample `n`, or all samples when `n` is omitted."""
    fits = model.center + batch_expand(model.cores, model.factors)
    if n is None:
        return fits
    if not 0 <= n < fits.shape[0]:
        raise IndexError(f"sample index {n} out of range")
    return fits[n]
