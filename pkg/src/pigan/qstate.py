"""Two-qubit density-matrix semantics.

Every function accepts a single 4x4 matrix or a stack ``(..., 4, 4)`` and is
vectorised over the leading axes. Inputs are Hermitised on entry; trace and
positivity are *measured* (see :func:`psd_violation`, :func:`trace_violation`)
rather than enforced, because generator outputs may violate them.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import linalg
from .linalg import PSD_TOL

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, SX, SY, SZ)

#: ``PAULI_PRODUCTS[i, j] = sigma_i (x) sigma_j`` with sigma_0 = I.
PAULI_PRODUCTS = np.array([[np.kron(a, b) for b in PAULIS] for a in PAULIS])

PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)


class BlochForm(NamedTuple):
    a: np.ndarray
    b: np.ndarray
    t: np.ndarray


def as_candidate(m) -> np.ndarray:
    """Hermitise ``m`` into a (stack of) 4x4 density candidate(s)."""
    m = np.asarray(m, dtype=complex)
    if m.shape[-2:] != (4, 4):
        raise ValueError(f"two-qubit candidates are 4x4, got shape {m.shape}")
    return linalg.hermitize(m)


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def pauli_embedding(rho) -> np.ndarray:
    """The 16 expectations ``Tr(rho sigma_i (x) sigma_j)``, row-major in ``(i, j)``."""
    rho = as_candidate(rho)
    vals = np.einsum("...ab,ijba->...ij", rho, PAULI_PRODUCTS)
    return np.real(vals).reshape(rho.shape[:-2] + (16,))


def from_embedding(phi) -> np.ndarray:
    """Inverse of :func:`pauli_embedding`: ``rho = 1/4 sum phi_ij sigma_i (x) sigma_j``."""
    phi = np.asarray(phi, dtype=float).reshape(np.shape(phi)[:-1] + (4, 4))
    return 0.25 * np.einsum("...ij,ijab->...ab", phi, PAULI_PRODUCTS)


def bloch_decompose(rho) -> BlochForm:
    phi = pauli_embedding(rho).reshape(np.shape(rho)[:-2] + (4, 4))
    return BlochForm(a=phi[..., 1:, 0], b=phi[..., 0, 1:], t=phi[..., 1:, 1:])


def bloch_compose(a, b, t) -> np.ndarray:
    a, b, t = np.asarray(a, float), np.asarray(b, float), np.asarray(t, float)
    phi = np.zeros(t.shape[:-2] + (4, 4))
    phi[..., 0, 0] = 1.0
    phi[..., 1:, 0] = a
    phi[..., 0, 1:] = b
    phi[..., 1:, 1:] = t
    return from_embedding(phi.reshape(t.shape[:-2] + (16,)))


def partial_transpose(rho, qubit: int = 1) -> np.ndarray:
    """Transpose on one qubit's indices (``qubit=1`` is the second qubit)."""
    rho = as_candidate(rho)
    r = rho.reshape(rho.shape[:-2] + (2, 2, 2, 2))
    if qubit == 1:
        r = np.swapaxes(r, -3, -1)
    elif qubit == 0:
        r = np.swapaxes(r, -4, -2)
    else:
        raise ValueError("qubit must be 0 or 1")
    return r.reshape(rho.shape)


def min_eig_pt(rho, qubit: int = 1) -> np.ndarray:
    return linalg.eigvalsh(partial_transpose(rho, qubit))[..., 0]


def is_ppt_entangled(rho) -> np.ndarray:
    return min_eig_pt(rho) < -PSD_TOL


def correlation_singular_values(t) -> np.ndarray:
    """Singular values of real 3x3 correlation matrices via ``eig(T^T T)``."""
    t = np.asarray(t, dtype=float)
    gram = np.swapaxes(t, -1, -2) @ t
    w = linalg.eigvalsh(gram)
    return np.sqrt(np.maximum(w, 0.0))


def teleportation_score(rho) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(N, F_max)`` with ``N = Tr sqrt(T^T T)`` and ``F_max = (1 + N/3)/2``."""
    n = np.sum(correlation_singular_values(bloch_decompose(rho).t), axis=-1)
    return n, 0.5 * (1.0 + n / 3.0)


def psd_violation(rho) -> np.ndarray:
    """Sum of the magnitudes of the negative eigenvalues."""
    w = linalg.eigvalsh(as_candidate(rho))
    return -np.sum(np.minimum(w, 0.0), axis=-1)


def trace_violation(rho) -> np.ndarray:
    return np.abs(np.real(np.trace(as_candidate(rho), axis1=-2, axis2=-1)) - 1.0)


def check_state(rho, tol: float = 1e-6) -> np.ndarray:
    rho = as_candidate(rho)
    if np.any(trace_violation(rho) > tol):
        raise ValueError(f"state is not normalised (|Tr - 1| > {tol})")
    low = np.min(linalg.eigvalsh(rho))
    if low < -tol:
        raise ValueError(f"state is not PSD (min eigenvalue {low:.3e})")
    return rho


def nearest_state(rho) -> np.ndarray:
    """Clip negative eigenvalues to zero and renormalise.

    A candidate whose spectrum is entirely non-positive maps to ``I/4``.
    """
    w, v = linalg.hermitian_eig(as_candidate(rho))
    w = np.maximum(w, 0.0)
    total = np.sum(w, axis=-1, keepdims=True)
    empty = total[..., 0] <= 1e-300
    w = np.where(total > 1e-300, w / np.where(total > 1e-300, total, 1.0), 0.25)
    out = (v * w[..., None, :]) @ linalg.adjoint(v)
    out[empty] = np.eye(4) / 4
    return out


def uhlmann_fidelity(rho, sigma, convention: str = "squared") -> np.ndarray:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``.

    ``convention="root"`` returns the un-squared trace instead. Both arguments
    must be valid states to within 1e-6; broadcasting over leading axes
    follows numpy rules.
    """
    rho = check_state(rho)
    sigma = check_state(sigma)
    return _fidelity(linalg.psd_sqrt(rho), sigma, convention)


def _fidelity(sqrt_rho, sigma, convention="squared"):
    m = sqrt_rho @ sigma @ sqrt_rho
    root = linalg.trace_sqrt(m)
    if convention == "root":
        return np.clip(root, 0.0, 1.0 + 1e-9)
    if convention != "squared":
        raise ValueError(f"unknown fidelity convention {convention!r}")
    return np.clip(root**2, 0.0, 1.0 + 1e-9)


def pairwise_fidelity(states_a, states_b, convention: str = "squared", chunk: int = 20000) -> np.ndarray:
    """Fidelity matrix ``F[i, j] = F(a_i, b_j)`` for two stacks of valid states."""
    a = check_state(states_a)
    b = check_state(states_b)
    sa = linalg.psd_sqrt(a)
    out = np.empty((len(a), len(b)))
    rows = max(1, chunk // max(len(b), 1))
    for start in range(0, len(a), rows):
        block = sa[start:start + rows]
        out[start:start + rows] = _fidelity(block[:, None], b[None, :], convention)
    return out
