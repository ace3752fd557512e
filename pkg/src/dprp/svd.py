"""Thin SVD by one-sided Jacobi rotations (initialization only, never differentiated)."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import InputError, NumericError

MAX_SWEEPS = 80


class SvdResult(NamedTuple):
    U: np.ndarray  # h x r
    sigma: np.ndarray  # r, descending, non-negative
    V: np.ndarray  # w x r


def _complete_basis(u: np.ndarray, filled: np.ndarray) -> None:
    """Fill the columns of ``u`` not flagged in ``filled`` with unit vectors
    orthogonal to everything already present (Gram-Schmidt on e_1, e_2, ...)."""
    m = u.shape[0]
    candidate = 0
    for j in np.flatnonzero(~filled):
        basis = u[:, filled]
        while True:
            v = np.zeros(m)
            v[candidate] = 1.0
            candidate += 1
            for _ in range(2):
                v -= basis @ (basis.T @ v)
            nrm = np.linalg.norm(v)
            if nrm > 0.5:
                break
        u[:, j] = v / nrm
        filled[j] = True


def svd(a) -> SvdResult:
    """Compute ``a = U diag(sigma) V^T`` with ``r = min(h, w)``.

    Columns of U are signed so that their largest-magnitude entry is
    non-negative. Zero singular values get an arbitrary orthonormal completion.
    """
    a = np.array(getattr(a, "data", a), dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 1:
        raise InputError(f"svd needs a non-empty matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise InputError("svd input has non-finite entries")
    flip = a.shape[0] < a.shape[1]
    work = np.ascontiguousarray(a.T if flip else a)
    m, n = work.shape
    v = np.eye(n)
    tol = m * np.finfo(np.float64).eps
    sweeps, off = _kernels.jacobi_sweeps(work, v, tol, MAX_SWEEPS)
    if sweeps > MAX_SWEEPS:
        raise NumericError(
            f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps; "
            f"largest normalized column inner product {off:.3e}"
        )
    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma, work, v = sigma[order], work[:, order], v[:, order]

    u = np.zeros((m, n))
    live = sigma > sigma[0] * np.finfo(np.float64).eps ** 2 if sigma[0] > 0 else np.zeros(n, bool)
    u[:, live] = work[:, live] / sigma[live]
    sigma[~live] = 0.0
    _complete_basis(u, live.copy())

    if flip:
        u, v = v, u
    for j in range(n):
        col = u[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            u[:, j] = -col
            v[:, j] = -v[:, j]
    return SvdResult(u, sigma, v)
