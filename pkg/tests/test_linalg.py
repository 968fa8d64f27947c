import numpy as np
import pytest
from conftest import random_hermitian
from hypothesis import given
from hypothesis import strategies as st
from oracles import bisection_eigenvalues, triple_loop_matmul

from pigan import families, linalg
from pigan.families import BellDiagonalParams


def test_matmul_identity_and_diagonal(rng):
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert np.array_equal(linalg.matmul(np.eye(4), m), m)
    out = linalg.matmul(np.diag([2.0, 3.0]), np.diag([5.0, 7.0]))
    assert np.array_equal(out, np.diag([10.0, 21.0]))


def test_matmul_against_triple_loop(rng):
    for _ in range(20):
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        assert np.max(np.abs(linalg.matmul(a, b) - triple_loop_matmul(a, b))) <= 1e-12


def test_matmul_dimension_mismatch():
    with pytest.raises(ValueError):
        linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_adjoint_examples(rng):
    h = random_hermitian(rng, 4)
    assert np.array_equal(linalg.adjoint(h), h)
    a = np.array([[0, 1j], [0, 0]])
    assert np.array_equal(linalg.adjoint(a), np.array([[0, 0], [-1j, 0]]))
    m = rng.normal(size=(5, 3)) + 1j * rng.normal(size=(5, 3))
    assert np.array_equal(linalg.adjoint(linalg.adjoint(m)), m)


def test_eig_identity():
    w, v = linalg.hermitian_eig(np.eye(4))
    assert np.allclose(w, 1.0, atol=0)
    assert np.allclose(v.conj().T @ v, np.eye(4), atol=1e-14)


def test_eig_bell_vertex_state():
    rho = families.bell_diagonal_state(BellDiagonalParams((1.0, -1.0, 1.0)))
    w = linalg.eigvalsh(rho)
    assert np.allclose(w, [0, 0, 0, 1], atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_eig_matches_bisection_oracle(seed):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, 8)
    assert np.max(np.abs(linalg.eigvalsh(h) - bisection_eigenvalues(h))) <= 1e-8


@pytest.mark.parametrize("d", [1, 2, 3, 4, 8, 16, 33])
def test_eig_reconstruction_and_orthonormality(rng, d):
    a = random_hermitian(rng, d, scale=3.0)
    w, v = linalg.hermitian_eig(a)
    scale = max(1.0, np.linalg.norm(a))
    assert np.all(np.diff(w) >= 0)
    assert np.max(np.abs(v @ np.diag(w) @ v.conj().T - a)) <= 1e-10 * scale
    assert np.max(np.abs(v.conj().T @ v - np.eye(d))) <= 1e-10
    resid = np.linalg.norm(a @ v - v * w, axis=0)
    assert np.all(resid <= 1e-10 * scale)


def test_eig_batched_matches_single(rng):
    stack = np.array([random_hermitian(rng, 4) for _ in range(7)])
    w, v = linalg.hermitian_eig(stack)
    for k in range(7):
        assert np.allclose(w[k], linalg.eigvalsh(stack[k]), atol=1e-13)
        assert np.allclose(v[k] @ np.diag(w[k]) @ v[k].conj().T, stack[k], atol=1e-12)


def test_eig_symmetrises_input(rng):
    h = random_hermitian(rng, 4)
    skew = 1e-10 * (rng.normal(size=(4, 4)) - rng.normal(size=(4, 4)).T)
    assert np.allclose(linalg.eigvalsh(h + skew), linalg.eigvalsh(h), atol=1e-9)


def test_eig_real_input_gives_real_vectors(rng):
    s = rng.normal(size=(5, 5))
    s = s + s.T
    w, v = linalg.hermitian_eig(s)
    assert v.dtype == np.float64
    assert np.allclose(v @ np.diag(w) @ v.T, s, atol=1e-12)


def test_eig_rejects_non_square():
    with pytest.raises(ValueError):
        linalg.hermitian_eig(np.ones((3, 4)))


def test_eig_non_convergence_is_numeric_error(monkeypatch, rng):
    monkeypatch.setattr(linalg, "MAX_SWEEPS", 1)
    with pytest.raises(linalg.NumericError) as info:
        linalg.hermitian_eig(random_hermitian(rng, 12))
    assert info.value.residual > 0


def test_eig_degenerate_and_zero():
    w, v = linalg.hermitian_eig(np.zeros((4, 4)))
    assert np.array_equal(w, np.zeros(4))
    d = np.diag([2.0, 2.0, -1.0, -1.0]).astype(complex)
    assert np.allclose(linalg.eigvalsh(d), [-1, -1, 2, 2])


def test_psd_sqrt_examples(rng):
    assert np.allclose(linalg.psd_sqrt(np.eye(4)), np.eye(4), atol=1e-15)
    assert np.allclose(linalg.psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    m = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    p = m @ m.conj().T
    b = linalg.psd_sqrt(p)
    assert np.linalg.norm(b @ b - p) <= 1e-8 * max(1.0, np.linalg.norm(p))
    assert np.min(linalg.eigvalsh(b)) >= -1e-12
    assert np.allclose(b, b.conj().T, atol=1e-14)


def test_psd_sqrt_clamps_tiny_negative_and_rejects_large():
    b = linalg.psd_sqrt(np.diag([1.0, -5e-10]))
    assert np.allclose(b, np.diag([1.0, 0.0]))
    with pytest.raises(linalg.NotPSDError) as info:
        linalg.psd_sqrt(np.diag([1.0, -1e-6]))
    assert info.value.eigenvalue == pytest.approx(-1e-6)


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 6))
def test_trace_equals_eigenvalue_sum(seed, d):
    a = random_hermitian(np.random.default_rng(seed), d, scale=5.0)
    tr = np.trace(a).real
    assert abs(np.sum(linalg.eigvalsh(a)) - tr) <= 1e-10 * max(1.0, abs(tr))


@given(seed=st.integers(0, 2**32 - 1))
def test_eigenvalues_invariant_under_pauli_string_unitary(seed):
    rng = np.random.default_rng(seed)
    paulis = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    i, j = rng.integers(0, 4, 2)
    phase = np.exp(1j * rng.uniform(0, 2 * np.pi))
    u = phase * np.kron(paulis[i], paulis[j])
    a = random_hermitian(rng, 4)
    assert np.allclose(linalg.eigvalsh(u @ a @ u.conj().T), linalg.eigvalsh(a), atol=1e-10)


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 5))
def test_psd_sqrt_commutes(seed, d):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    p = m @ m.conj().T
    b = linalg.psd_sqrt(p)
    assert np.linalg.norm(b @ p - p @ b) <= 1e-8 * max(1.0, np.linalg.norm(p))
