"""Hot inner loops: patch extraction for convolution and Jacobi SVD sweeps.

Every kernel exists twice, a numba ``@njit`` version and a pure-numpy
version with identical semantics. The numba path is used when numba imports
and ``DPRP_NUMBA`` is not set to ``0``; ``use_numba(False)`` switches at
runtime (the benchmark and the cross-path tests rely on that).
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

_enabled = NUMBA_AVAILABLE and os.environ.get("DPRP_NUMBA", "1") != "0"


def use_numba(flag: bool | None = None) -> bool:
    """Query or set the active backend. Returns the state after the call."""
    global _enabled
    if flag is not None:
        _enabled = bool(flag) and NUMBA_AVAILABLE
    return _enabled


def backend() -> str:
    return "numba" if _enabled else "numpy"


# --------------------------------------------------------------------------
# im2col / col2im
# --------------------------------------------------------------------------
# Column layout of a patch row is (c, ky, kx), matching K.reshape(S, C*L2*L1).


def _im2col_numpy(xp, kh, kw, stride, out_h, out_w):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n, out_h * out_w, c * kh * kw
    )


def _col2im_numpy(cols, n, c, hp, wp, kh, kw, stride, out_h, out_w):
    d6 = cols.reshape(n, out_h, out_w, c, kh, kw)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for ky in range(kh):
        for kx in range(kw):
            out[
                :,
                :,
                ky : ky + stride * (out_h - 1) + 1 : stride,
                kx : kx + stride * (out_w - 1) + 1 : stride,
            ] += d6[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    return out


if NUMBA_AVAILABLE:

    @numba.njit(cache=True)
    def _im2col_numba(xp, kh, kw, stride, out_h, out_w):
        n, c = xp.shape[0], xp.shape[1]
        cols = np.empty((n, out_h * out_w, c * kh * kw), dtype=xp.dtype)
        for b in range(n):
            for i in range(out_h):
                for j in range(out_w):
                    row = i * out_w + j
                    y0 = i * stride
                    x0 = j * stride
                    col = 0
                    for ch in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                cols[b, row, col] = xp[b, ch, y0 + ky, x0 + kx]
                                col += 1
        return cols

    @numba.njit(cache=True)
    def _col2im_numba(cols, n, c, hp, wp, kh, kw, stride, out_h, out_w):
        out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
        # ky/kx outermost so every output element accumulates in the same
        # order as the numpy path (bitwise-equal results).
        for ky in range(kh):
            for kx in range(kw):
                for b in range(n):
                    for ch in range(c):
                        col = (ch * kh + ky) * kw + kx
                        for i in range(out_h):
                            y = ky + i * stride
                            for j in range(out_w):
                                out[b, ch, y, kx + j * stride] += cols[b, i * out_w + j, col]
        return out


def im2col(xp: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Patches of an already padded ``N x C x Hp x Wp`` batch."""
    if _enabled:
        return _im2col_numba(np.ascontiguousarray(xp), kh, kw, stride, out_h, out_w)
    return _im2col_numpy(xp, kh, kw, stride, out_h, out_w)


def col2im(cols, n, c, hp, wp, kh, kw, stride, out_h, out_w) -> np.ndarray:
    """Adjoint of :func:`im2col`; overlapping patches are summed."""
    if _enabled:
        return _col2im_numba(np.ascontiguousarray(cols), n, c, hp, wp, kh, kw, stride, out_h, out_w)
    return _col2im_numpy(cols, n, c, hp, wp, kh, kw, stride, out_h, out_w)


# --------------------------------------------------------------------------
# One-sided (Hestenes) Jacobi
# --------------------------------------------------------------------------


def _jacobi_numpy(a, v, tol, max_sweeps):
    n = a.shape[1]
    off = 0.0
    for sweep in range(max_sweeps):
        off = 0.0
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = a[:, p]
                aq = a[:, q]
                alpha = float(ap @ ap)
                beta = float(aq @ aq)
                gamma = float(ap @ aq)
                if gamma == 0.0 or alpha == 0.0 or beta == 0.0:
                    continue
                ratio = abs(gamma) / np.sqrt(alpha * beta)
                off = max(off, ratio)
                if ratio <= tol:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0.0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                new_p = cs * ap - sn * aq
                a[:, q] = sn * ap + cs * aq
                a[:, p] = new_p
                vp = v[:, p].copy()
                v[:, p] = cs * vp - sn * v[:, q]
                v[:, q] = sn * vp + cs * v[:, q]
        if not rotated:
            return sweep + 1, off
    return max_sweeps + 1, off


if NUMBA_AVAILABLE:

    @numba.njit(cache=True)
    def _jacobi_numba(a, v, tol, max_sweeps):
        m, n = a.shape
        off = 0.0
        for sweep in range(max_sweeps):
            off = 0.0
            rotated = False
            for p in range(n - 1):
                for q in range(p + 1, n):
                    alpha = 0.0
                    beta = 0.0
                    gamma = 0.0
                    for k in range(m):
                        alpha += a[k, p] * a[k, p]
                        beta += a[k, q] * a[k, q]
                        gamma += a[k, p] * a[k, q]
                    if gamma == 0.0 or alpha == 0.0 or beta == 0.0:
                        continue
                    ratio = abs(gamma) / np.sqrt(alpha * beta)
                    if ratio > off:
                        off = ratio
                    if ratio <= tol:
                        continue
                    rotated = True
                    zeta = (beta - alpha) / (2.0 * gamma)
                    sgn = 1.0 if zeta >= 0.0 else -1.0
                    t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                    cs = 1.0 / np.sqrt(1.0 + t * t)
                    sn = cs * t
                    for k in range(m):
                        x = a[k, p]
                        y = a[k, q]
                        a[k, p] = cs * x - sn * y
                        a[k, q] = sn * x + cs * y
                    for k in range(v.shape[0]):
                        x = v[k, p]
                        y = v[k, q]
                        v[k, p] = cs * x - sn * y
                        v[k, q] = sn * x + cs * y
            if not rotated:
                return sweep + 1, off
        return max_sweeps + 1, off


def jacobi_sweeps(a: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> tuple[int, float]:
    """Orthogonalize the columns of ``a`` in place, accumulating rotations in ``v``.

    Returns ``(sweeps, off)``; ``sweeps > max_sweeps`` means no convergence and
    ``off`` is the largest normalized column inner product seen in the last sweep.
    """
    if _enabled:
        sweeps, off = _jacobi_numba(a, v, tol, max_sweeps)
        return int(sweeps), float(off)
    return _jacobi_numpy(a, v, tol, max_sweeps)
