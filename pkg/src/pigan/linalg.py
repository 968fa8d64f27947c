"""Small dense complex linear algebra.

Matrices are plain ``numpy`` arrays of dtype ``complex128`` (or ``float64``),
optionally stacked along leading batch axes. The eigensolver is a cyclic
complex Jacobi method, vectorised over the batch axes so that thousands of
4x4 states can be diagonalised at once.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

#: Global tolerance below which an eigenvalue is still considered non-negative.
PSD_TOL = 1e-9

MAX_SWEEPS = 100
MAX_DIM = 512

# Eigenvalues smaller than this (relative to the spectral scale) are rounding
# noise; square roots treat them as exact zeros.
_RANK_CUTOFF = 64 * np.finfo(float).eps


class NumericError(ArithmeticError):
    """Raised when an iterative routine fails or an input is numerically invalid."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NotPSDError(NumericError):
    """Raised by :func:`psd_sqrt` when an eigenvalue is below ``-PSD_TOL``."""

    def __init__(self, eigenvalue: float):
        super().__init__(f"matrix is not PSD: eigenvalue {eigenvalue:.3e}")
        self.eigenvalue = eigenvalue


class HermitianEig(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a)
    if not np.iscomplexobj(a):
        a = a.astype(np.float64)
    if a.ndim < 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit dimension check."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def adjoint(a) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(as_matrix(a), -1, -2))


def hermitize(a) -> np.ndarray:
    a = as_matrix(a)
    return 0.5 * (a + adjoint(a))


def _check_square(a: np.ndarray) -> int:
    d = a.shape[-1]
    if a.shape[-2] != d:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if d > MAX_DIM:
        raise ValueError(f"dimension {d} exceeds supported maximum {MAX_DIM}")
    return d


def hermitian_eig(a, vectors: bool = True) -> HermitianEig:
    """Eigendecomposition of a Hermitian matrix (or a stack of them).

    The input is symmetrised as ``(A + A^H) / 2`` first. Cyclic Jacobi sweeps
    visit the pairs ``(p, q)`` in row-major order; a rotation is skipped once
    the pivot is negligible for every matrix in the batch.

    Returns eigenvalues in ascending order and unit eigenvectors as columns
    (``None`` when ``vectors`` is false). Raises :class:`NumericError` if 100
    sweeps do not converge.
    """
    a = as_matrix(a)
    d = _check_square(a)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite entries in eigensolver input")
    batch_shape = a.shape[:-2]
    work = hermitize(a).astype(np.complex128).reshape((-1, d, d))
    # batch-last layout keeps every rotation a contiguous row operation
    work = np.ascontiguousarray(np.moveaxis(work, 0, -1))
    n = work.shape[-1]
    vecs = None
    if vectors:
        vecs = np.repeat(np.eye(d, dtype=np.complex128)[:, :, None], n, axis=2)

    scale = np.sqrt(np.sum(np.abs(work) ** 2, axis=(0, 1)))
    tol = np.finfo(float).eps * 1e-2 * np.maximum(scale, np.finfo(float).tiny)
    pairs = [(p, q) for p in range(d - 1) for q in range(p + 1, d)]
    off_mask = ~np.eye(d, dtype=bool)

    converged = d < 2
    for _ in range(MAX_SWEEPS):
        if converged:
            break
        for p, q in pairs:
            mag = np.abs(work[p, q])
            active = mag > tol
            if active.any():
                _rotate(work, vecs, p, q, mag, active)
        converged = bool(np.all(np.abs(work[off_mask]) <= tol))
    if not converged:
        raise NumericError("Jacobi eigensolver did not converge",
                           residual=float(np.abs(work[off_mask]).max()))

    w = np.real(np.diagonal(work, axis1=0, axis2=1))  # (n, d)
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1).reshape(batch_shape + (d,))
    if not vectors:
        return HermitianEig(w, None)
    vecs = np.moveaxis(vecs, -1, 0)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    if not np.iscomplexobj(a):
        # real symmetric input: fix the global phase so eigenvectors come out real
        vecs = _realify(vecs)
    return HermitianEig(w, vecs.reshape(batch_shape + (d, d)))


def _rotate(work, vecs, p, q, r, active) -> None:
    # A <- G^H A G with G acting on (p, q); G = P J, P = diag(1, e^{-i phi}).
    app = work[p, p].real.copy()
    aqq = work[q, q].real.copy()
    safe_r = np.where(active, r, 1.0)
    phase = np.where(active, work[p, q] / safe_r, 1.0)
    tau = (aqq - app) / (2.0 * safe_r)
    t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    sph = s * np.conj(phase)
    cph = c * np.conj(phase)

    cp = work[:, p].copy()
    cq = work[:, q]
    work[:, p] = c * cp - sph * cq
    work[:, q] = s * cp + cph * cq
    rp = work[p].copy()
    rq = work[q]
    work[p] = c * rp - np.conj(sph) * rq
    work[q] = s * rp + np.conj(cph) * rq
    work[p, q] = 0.0
    work[q, p] = 0.0
    work[p, p] = app - t * r
    work[q, q] = aqq + t * r

    if vecs is not None:
        vp = vecs[:, p].copy()
        vq = vecs[:, q]
        vecs[:, p] = c * vp - sph * vq
        vecs[:, q] = s * vp + cph * vq


def _realify(vecs: np.ndarray) -> np.ndarray:
    pivot = np.argmax(np.abs(vecs), axis=1)
    lead = np.take_along_axis(vecs, pivot[:, None, :], axis=1)
    return np.real(vecs * (np.abs(lead) / lead))


def eigvalsh(a) -> np.ndarray:
    return hermitian_eig(a, vectors=False).eigenvalues


def _clean_sqrt(w: np.ndarray, cutoff: bool = True) -> np.ndarray:
    if not cutoff:
        return np.sqrt(np.maximum(w, 0.0))
    top = np.max(np.abs(w), axis=-1, keepdims=True)
    w = np.where(w <= _RANK_CUTOFF * np.maximum(top, 1.0), 0.0, w)
    return np.sqrt(w)


def psd_sqrt(a, cutoff: bool = True) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix (or stack).

    Eigenvalues in ``[-PSD_TOL, 0)`` are clamped to zero; anything more
    negative raises :class:`NotPSDError`. With ``cutoff`` eigenvalues below
    ``64 eps max(1, |lambda|_max)`` are treated as exact zeros, which keeps
    square roots of rank-deficient states clean; pass ``False`` for matrices
    whose small eigenvalues are meaningful (e.g. ridge-regularised covariances).
    """
    a = as_matrix(a)
    w, v = hermitian_eig(a)
    low = float(np.min(w)) if w.size else 0.0
    if low < -PSD_TOL:
        raise NotPSDError(low)
    root = _clean_sqrt(w, cutoff)
    out = (v * root[..., None, :]) @ adjoint(v)
    if not np.iscomplexobj(a):
        out = np.real(out)
    return out


def trace_sqrt(a, cutoff: bool = True) -> np.ndarray:
    """``Tr sqrt(A)`` for Hermitian PSD ``A``; negative rounding noise is dropped."""
    w = eigvalsh(a)
    return np.sum(_clean_sqrt(np.maximum(w, 0.0), cutoff), axis=-1)


def frobenius(a) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(as_matrix(a)) ** 2, axis=(-2, -1)))
