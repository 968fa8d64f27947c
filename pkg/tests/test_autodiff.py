import numpy as np
import pytest
from conftest import random_hermitian
from hypothesis import given
from hypothesis import strategies as st
from oracles import central_difference

from pigan import autodiff as ad
from pigan.autodiff import Tensor


def grad_of(fn, x):
    """Analytic gradient of scalar ``fn(Tensor)`` at ``x``."""
    t = Tensor(np.array(x, dtype=float), requires_grad=True)
    out = fn(t)
    ad.backward(out)
    return t.grad


def assert_fd(fn, x, rel=1e-4, h=1e-5, floor=1e-6):
    x = np.array(x, dtype=float)
    g = grad_of(fn, x)
    fd = central_difference(lambda v: float(fn(Tensor(v)).value), x, h)
    err = np.abs(g - fd) / np.maximum(np.abs(fd), floor)
    assert err.max() <= rel, (g, fd)


def test_square_grad():
    assert grad_of(lambda w: ad.square(w), 3.0) == pytest.approx(6.0)


def test_sigmoid_grad(rng):
    x = rng.normal(size=7) * 3
    g = grad_of(lambda w: ad.tsum(ad.sigmoid(w)), x)
    s = 1 / (1 + np.exp(-x))
    assert np.max(np.abs(g - s * (1 - s))) <= 1e-12


def test_sigmoid_stable_at_extremes():
    out = ad.sigmoid(Tensor([-800.0, 0.0, 800.0])).value
    assert np.all(np.isfinite(out)) and out[1] == 0.5


@pytest.mark.parametrize("op", [
    lambda t: ad.tsum(ad.exp(t) * t),
    lambda t: ad.tsum(ad.log(ad.square(t) + 1.0)),
    lambda t: ad.tsum(ad.softplus(t) * ad.sqrt(ad.square(t) + 0.5)),
    lambda t: ad.tsum(ad.leaky_relu(t, 0.2) * t),
    lambda t: ad.tsum(ad.reciprocal(ad.square(t) + 1.0)),
    lambda t: ad.tmax(t.reshape(3, 4), axis=-1).sum(),
    lambda t: ad.mean(ad.absolute(t) * t),
    lambda t: ad.tsum(ad.matmul(t.reshape(3, 4), t.reshape(4, 3))),
    lambda t: ad.tsum(ad.concat([t[:5], ad.square(t[5:])])),
    lambda t: ad.tsum(ad.swapaxes(t.reshape(2, 6), 0, 1) * np.arange(12.0).reshape(6, 2)),
    lambda t: ad.tsum(t[np.array([0, 0, 3, 5])] * np.array([1.0, 2.0, 3.0, 4.0])),
    lambda t: ad.tsum(ad.maximum(t, 0.1 * t)),
    lambda t: ad.tsum(ad.hinge(t, 0.3)),
    lambda t: ad.tsum(ad.pairwise_distance(t.reshape(4, 3))),
])
def test_primitive_gradients(rng, op):
    x = rng.normal(size=12)
    x[np.abs(x) < 0.05] += 0.2  # keep away from kinks
    assert_fd(op, x)


def test_affine_and_layer_norm_gradients(rng):
    w = rng.normal(size=(5, 4))
    b = rng.normal(size=4)
    gamma = rng.normal(size=4)
    x = rng.normal(size=(3, 5))

    def f(t):
        h = ad.affine(t, w, b)
        return ad.tsum(ad.square(ad.layer_norm(h, Tensor(gamma), Tensor(np.zeros(4)))) * np.arange(4.0))
    assert_fd(f, x)
    assert_fd(lambda t: ad.tsum(ad.square(ad.affine(x, t.reshape(5, 4), b))), w.ravel())
    assert_fd(lambda t: ad.tsum(ad.square(ad.layer_norm(ad.affine(x, w, b), t, Tensor(np.ones(4))))), gamma)


def test_layer_norm_statistics(rng):
    x = Tensor(rng.normal(size=(6, 32)) * 5 + 3)
    out = ad.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).value
    assert np.max(np.abs(out.mean(axis=1))) <= 1e-10
    # variance floor 1e-5 shrinks the unit variance by a relative ~1e-5/var
    var = x.value.var(axis=1)
    assert np.allclose(out.var(axis=1), var / (var + 1e-5), atol=1e-10)


def test_backward_twice_is_error():
    w = Tensor(2.0, requires_grad=True)
    out = w * w
    ad.backward(out)
    with pytest.raises(RuntimeError):
        ad.backward(out)


def test_backward_needs_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(w * 2.0)


def test_disconnected_graph_gives_no_grad():
    w = Tensor(np.ones(3), requires_grad=True)
    out = ad.tsum(Tensor(np.ones(3)) * 2.0)
    ad.backward(out)
    assert w.grad is None


def test_gradient_accumulates_over_shared_leaf():
    w = Tensor(1.5, requires_grad=True)
    ad.backward(w * w + w * 3.0)
    assert w.grad == pytest.approx(2 * 1.5 + 3.0)


# spectral nodes ------------------------------------------------------------------

def _split(h):
    return Tensor(h.real.copy()), Tensor(h.imag.copy())


def test_psd_violation_node_diagonal():
    re = Tensor(np.diag([1.0, -0.5, 0.25, 0.25]), requires_grad=True)
    im = Tensor(np.zeros((4, 4)), requires_grad=True)
    out = ad.psd_violation(re, im)
    assert float(out.value) == pytest.approx(0.5)
    ad.backward(out)
    expected = np.zeros((4, 4))
    expected[1, 1] = -1.0
    assert np.allclose(re.grad, expected, atol=1e-14)
    assert np.allclose(im.grad, 0.0, atol=1e-14)


def test_psd_violation_node_zero_on_psd(rng):
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    p = m @ m.conj().T
    re = Tensor(p.real, requires_grad=True)
    im = Tensor(p.imag, requires_grad=True)
    out = ad.psd_violation(re, im)
    ad.backward(out)
    assert float(out.value) == 0.0
    assert np.all(re.grad == 0) and np.all(im.grad == 0)


def _spectral_probe(rng, min_gap=1e-3):
    while True:
        h = random_hermitian(rng, 4)
        w = np.linalg.eigvalsh(h)
        if np.min(np.abs(w)) > min_gap and np.min(np.diff(w)) > min_gap and (w < 0).any():
            return h


@pytest.mark.parametrize("node", ["psd", "min_eig"])
def test_spectral_node_finite_differences(rng, node):
    fn = ad.psd_violation if node == "psd" else ad.min_eigenvalue
    for _ in range(10):
        h = _spectral_probe(rng)
        x = np.concatenate([h.real.ravel(), h.imag.ravel()])

        def f(t):
            return ad.tsum(fn(t[:16].reshape(4, 4), t[16:].reshape(4, 4)))
        assert_fd(f, x)


def test_nuclear_norm_node(rng):
    t = rng.normal(size=(3, 3))
    out = ad.nuclear_norm(Tensor(t))
    assert float(out.value) == pytest.approx(np.sum(np.linalg.svd(t, compute_uv=False)), abs=1e-12)
    assert_fd(lambda v: ad.tsum(ad.nuclear_norm(v.reshape(3, 3))), t.ravel())


def test_nuclear_norm_batched(rng):
    t = rng.normal(size=(5, 3, 3))
    out = ad.nuclear_norm(Tensor(t)).value
    assert np.allclose(out, np.linalg.svd(t, compute_uv=False).sum(axis=1), atol=1e-12)


# layers and optimiser --------------------------------------------------------------

def test_forward_identity_affine():
    store = ad.ParamStore()
    store.add("L.0.W", np.eye(3))
    store.add("L.0.b", np.zeros(3))
    x = np.array([[1.0, -2.0, 3.0]])
    out = ad.forward([ad.Affine(3, 3)], store, x, prefix="L.")
    assert np.array_equal(out.value, x)


def test_forward_leaky_relu():
    out = ad.forward([ad.LeakyReLU(0.2)], ad.ParamStore(), np.array([[-1.0, 2.0]]))
    assert np.allclose(out.value, [[-0.2, 2.0]])


def test_dropout_rate_zero_equals_eval(rng):
    net = [ad.Affine(4, 8), ad.Dropout(0.0), ad.LeakyReLU(), ad.Affine(8, 2)]
    store = ad.ParamStore()
    ad.init_layers(store, net, rng, "N.")
    x = rng.normal(size=(5, 4))
    a = ad.forward(net, store, x, train_mode=True, rng=np.random.default_rng(0), prefix="N.")
    b = ad.forward(net, store, x, train_mode=False, prefix="N.")
    assert np.array_equal(a.value, b.value)


def test_dropout_needs_rng(rng):
    with pytest.raises(ValueError):
        ad.forward([ad.Dropout(0.5)], ad.ParamStore(), np.ones((2, 3)), train_mode=True)


def test_forward_shape_mismatch(rng):
    store = ad.ParamStore()
    ad.init_layers(store, [ad.Affine(3, 2)], rng, "N.")
    with pytest.raises(ValueError):
        ad.forward([ad.Affine(3, 2)], store, np.ones((2, 4)), prefix="N.")


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        ad.Affine(0, 3)
    with pytest.raises(ValueError):
        ad.Dropout(1.0)


def test_rmsprop_zero_grad_keeps_params():
    store = ad.ParamStore()
    t = store.add("w", np.array([1.0, 2.0]))
    t.grad = np.zeros(2)
    ad.rmsprop_step(store, 1e-3)
    assert np.array_equal(t.value, [1.0, 2.0])


def test_rmsprop_first_step_closed_form():
    store = ad.ParamStore()
    t = store.add("w", np.zeros(3))
    t.grad = np.ones(3)
    ad.rmsprop_step(store, 1e-5, decay=0.99, eps=1e-8)
    assert np.allclose(t.value, -1e-5 / (0.1 + 1e-8), rtol=1e-12)
    assert t.grad is None
    assert np.all(store.accum["w"] >= 0)


def test_rmsprop_deterministic(rng):
    g = rng.normal(size=4)
    outs = []
    for _ in range(2):
        store = ad.ParamStore()
        t = store.add("w", np.arange(4.0))
        for _ in range(3):
            t.grad = g.copy()
            ad.rmsprop_step(store, 1e-2)
        outs.append(t.value.copy())
    assert np.array_equal(outs[0], outs[1])


def test_frozen_store_records_no_graph(rng):
    store = ad.ParamStore()
    ad.init_layers(store, [ad.Affine(3, 2)], rng, "N.")
    out = ad.forward([ad.Affine(3, 2)], store.frozen(), np.ones((1, 3)), prefix="N.")
    assert out.parents == ()


@given(seed=st.integers(0, 2**32 - 1))
def test_eval_forward_is_pure(seed):
    rng = np.random.default_rng(seed)
    net = [ad.Affine(4, 6), ad.LeakyReLU(), ad.LayerNorm(6), ad.Dropout(0.3), ad.Affine(6, 1), ad.Sigmoid()]
    store = ad.ParamStore()
    ad.init_layers(store, net, rng, "N.")
    x = rng.normal(size=(3, 4))
    a = ad.forward(net, store, x, prefix="N.").value
    b = ad.forward(net, store, x, prefix="N.").value
    assert np.array_equal(a, b) and np.all((a > 0) & (a < 1))
