"""Define-by-run reverse-mode differentiation on numpy arrays.

A :class:`Tensor` wraps a ``float64`` array. Operations record their parents
and a vector-Jacobian closure; :func:`backward` walks the recorded graph once
in reverse topological order. The graph is rebuilt on every step.

Besides the usual elementwise/matmul primitives there are three spectral
nodes used by the physics losses: :func:`psd_violation` (sum of negative
eigenvalues of a Hermitian matrix given as real/imaginary channels),
:func:`min_eigenvalue` and :func:`nuclear_norm`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import linalg


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "vjp", "name", "_done")

    def __init__(self, value, requires_grad=False, parents=(), vjp=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.grad = None
        self._done = False

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        if not other.requires_grad and other.parents == ():
            return mul(self, 1.0 / other.value)
        return mul(self, reciprocal(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*xs) -> bool:
    return any(x.requires_grad or x.parents for x in xs)


def _node(value, parents, vjp) -> Tensor:
    parents = tuple(parents)
    if not _tracked(*parents):
        return Tensor(value)
    return Tensor(value, parents=parents, vjp=vjp)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(root: Tensor) -> None:
    """Accumulate ``d root / d leaf`` into ``leaf.grad`` for every tracked leaf.

    ``root`` must be a scalar. A graph can be differentiated only once.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if root._done:
        raise RuntimeError("backward already ran on this graph; rebuild it first")
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if not node.parents:
            if node.requires_grad and g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if node.vjp is None:
            raise RuntimeError("graph was already consumed by an earlier backward pass")
        node._done = True
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not (parent.requires_grad or parent.parents):
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        node.vjp = None


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def reciprocal(a) -> Tensor:
    out = 1.0 / a.value
    return _node(out, (a,), lambda g: (-g * out * out,))


def square(a) -> Tensor:
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def sqrt(a, floor: float = 0.0) -> Tensor:
    """Elementwise square root; the derivative at exactly zero is taken as zero."""
    out = np.sqrt(np.maximum(a.value, floor))
    safe = np.where(out > 0, out, 1.0)
    return _node(out, (a,), lambda g: (np.where(out > 0, 0.5 * g / safe, 0.0),))


def exp(a) -> Tensor:
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a, clamp: float = 0.0) -> Tensor:
    """Natural log of ``max(a, clamp)``; clamped entries get zero gradient."""
    x = np.maximum(a.value, clamp) if clamp else a.value
    live = a.value >= clamp if clamp else np.ones(a.shape, bool)
    return _node(np.log(x), (a,), lambda g: (np.where(live, g / x, 0.0),))


def absolute(a) -> Tensor:
    return _node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def relu(a) -> Tensor:
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    x = a.value
    out = np.maximum(x, slope * x) if slope <= 1.0 else np.minimum(x, slope * x)

    def vjp(g):
        gx = g * slope
        np.copyto(gx, g, where=x > 0)
        return (gx,)
    return _node(out, (a,), vjp)


def _wants(t: Tensor) -> bool:
    return t.requires_grad or bool(t.parents)


def sigmoid(a) -> Tensor:
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    x = a.value
    out = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(out, (a,), lambda g: (g * sig,))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick = a.value >= b.value
    return _node(np.where(pick, a.value, b.value), (a, b),
                 lambda g: (_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)))


def tmax(a, axis=-1) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximiser."""
    idx = np.expand_dims(np.argmax(a.value, axis=axis), axis)
    out = np.take_along_axis(a.value, idx, axis=axis)

    def vjp(g):
        full = np.zeros_like(a.value)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)
    return _node(np.squeeze(out, axis), (a,), vjp)


def hinge(a, margin=0.0) -> Tensor:
    """``max(0, margin - a)``."""
    return relu(neg(as_tensor(a)) + margin)


# shape -----------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)
    return _node(out, (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a, i, j) -> Tensor:
    return _node(np.swapaxes(a.value, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def _scatter_safe(idx) -> bool:
    # plain assignment is enough when no element is addressed twice
    parts = idx if isinstance(idx, tuple) else (idx,)
    arrays = [np.asarray(p) for p in parts if not isinstance(p, (slice, int, type(Ellipsis)))]
    if not arrays:
        return True
    if len(arrays) == 1 and arrays[0].dtype != bool:
        flat = arrays[0].ravel()
        return len(np.unique(flat)) == flat.size
    return False


def getitem(a, idx) -> Tensor:
    unique = _scatter_safe(idx)

    def vjp(g):
        full = np.zeros_like(a.value)
        if unique:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _node(a.value[idx], (a,), vjp)


def concat(xs, axis=-1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _node(np.concatenate([x.value for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"shape mismatch in matmul: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape) if _wants(a) else None
        gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape) if _wants(b) else None
        return ga, gb
    return _node(a.value @ b.value, (a, b), vjp)


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` for ``x`` of shape ``(B, n_in)`` as one node."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)

    def vjp(g):
        gx = g @ w.value.T if _wants(x) else None
        gw = x.value.T @ g if _wants(w) else None
        gb = g.sum(axis=0) if _wants(b) else None
        return gx, gw, gb
    return _node(x.value @ w.value + b.value, (x, w, b), vjp)


# spectral nodes ---------------------------------------------------------------

def _hermitian(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    return linalg.hermitize(re + 1j * im)


def _channel_grads(coef: np.ndarray, vecs: np.ndarray):
    # d lambda / dH = v v^H; channel derivatives are Re(conj(v_a) v_b), -Im(...)
    outer = np.einsum("...ak,...k,...bk->...ab", np.conj(vecs), coef, vecs)
    return np.real(outer), -np.imag(outer)


def psd_violation(re, im) -> Tensor:
    """``sum_j max(0, -lambda_j)`` of ``H = herm(re + i im)``, per matrix.

    The gradient is ``-sum_{lambda_j < 0} v_j v_j^H`` mapped to the two
    channels. It depends only on the projector onto the negative eigenspace,
    so degenerate negative eigenvalues need no special treatment.
    """
    re, im = as_tensor(re), as_tensor(im)
    w, v = linalg.hermitian_eig(_hermitian(re.value, im.value))
    neg_mask = w < 0
    out = -np.sum(np.where(neg_mask, w, 0.0), axis=-1)

    def vjp(g):
        gr, gi = _channel_grads(-neg_mask.astype(float), v)
        g = np.asarray(g)[..., None, None]
        return g * gr, g * gi
    return _node(out, (re, im), vjp)


def min_eigenvalue(re, im) -> Tensor:
    """Smallest eigenvalue of ``herm(re + i im)``, per matrix."""
    re, im = as_tensor(re), as_tensor(im)
    w, v = linalg.hermitian_eig(_hermitian(re.value, im.value))
    coef = np.zeros_like(w)
    coef[..., 0] = 1.0

    def vjp(g):
        gr, gi = _channel_grads(coef, v)
        g = np.asarray(g)[..., None, None]
        return g * gr, g * gi
    return _node(w[..., 0], (re, im), vjp)


def nuclear_norm(t, floor: float = 1e-12) -> Tensor:
    """Sum of singular values of real matrices ``(..., m, n)`` via ``eig(T^T T)``.

    The gradient ``T V diag(1/sigma) V^T`` drops directions with
    ``sigma <= floor`` (the subgradient choice at rank deficiency).
    """
    t = as_tensor(t)
    gram = np.swapaxes(t.value, -1, -2) @ t.value
    w, v = linalg.hermitian_eig(gram)
    sig = np.sqrt(np.maximum(w, 0.0))
    out = sig.sum(axis=-1)

    def vjp(g):
        inv = np.where(sig > floor, 1.0 / np.where(sig > floor, sig, 1.0), 0.0)
        core = (v * inv[..., None, :]) @ np.swapaxes(v, -1, -2)
        return (np.asarray(g)[..., None, None] * (t.value @ core),)
    return _node(out, (t,), vjp)


def pairwise_distance(x) -> Tensor:
    """Euclidean distances between all rows ``i < j`` of a ``(B, F)`` tensor."""
    x = as_tensor(x)
    b = x.shape[0]
    i, j = np.triu_indices(b, k=1)
    diff = x.value[i] - x.value[j]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    safe = np.where(dist > 0, dist, 1.0)

    def vjp(g):
        # grad_i = sum_j c_ij (x_i - x_j) with c symmetric
        c = np.zeros((b, b))
        c[i, j] = np.where(dist > 0, g / safe, 0.0)
        c += c.T
        return (c.sum(axis=1)[:, None] * x.value - c @ x.value,)
    return _node(dist, (x,), vjp)


# layers ----------------------------------------------------------------------

class Kind(str, enum.Enum):
    AFFINE = "affine"
    LEAKY_RELU = "leaky_relu"
    LAYER_NORM = "layer_norm"
    DROPOUT = "dropout"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"


@dataclass(frozen=True)
class LayerSpec:
    kind: Kind
    n_in: int = 0
    n_out: int = 0
    rate: float = 0.0
    slope: float = 0.2

    def __post_init__(self):
        if self.kind is Kind.AFFINE and (self.n_in <= 0 or self.n_out <= 0):
            raise ValueError("affine layer sizes must be positive")
        if self.kind is Kind.DROPOUT and not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


def Affine(n_in, n_out):
    return LayerSpec(Kind.AFFINE, n_in, n_out)


def LeakyReLU(slope=0.2):
    return LayerSpec(Kind.LEAKY_RELU, slope=slope)


def LayerNorm(n):
    return LayerSpec(Kind.LAYER_NORM, n, n)


def Dropout(rate):
    return LayerSpec(Kind.DROPOUT, rate=rate)


def Sigmoid():
    return LayerSpec(Kind.SIGMOID)


def Softplus():
    return LayerSpec(Kind.SOFTPLUS)


@dataclass
class ParamStore:
    """Named parameters plus their RMSprop square-gradient accumulators."""

    params: dict = field(default_factory=dict)
    accum: dict = field(default_factory=dict)

    def add(self, name: str, value) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.accum[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self, prefix: str = ""):
        return [k for k in self.params if k.startswith(prefix)]

    def zero_grad(self, prefix: str = ""):
        for k in self.names(prefix):
            self.params[k].grad = None

    def frozen(self, prefix: str = "") -> "ParamStore":
        """A view whose tensors are constants (no gradient is recorded)."""
        out = ParamStore()
        for k in self.names(prefix):
            out.params[k] = Tensor(self.params[k].value)
            out.accum[k] = self.accum[k]
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, t in self.params.items():
            out.params[k] = Tensor(t.value.copy(), requires_grad=True, name=k)
            out.accum[k] = self.accum[k].copy()
        return out

    def norms(self) -> dict:
        return {k: float(np.linalg.norm(t.value)) for k, t in self.params.items()}


def init_layers(store: ParamStore, net, rng: np.random.Generator, prefix: str) -> None:
    """Uniform ``+-1/sqrt(fan_in)`` affine init, unit-gain LayerNorm."""
    for i, spec in enumerate(net):
        if spec.kind is Kind.AFFINE:
            bound = 1.0 / np.sqrt(spec.n_in)
            store.add(f"{prefix}{i}.W", rng.uniform(-bound, bound, (spec.n_in, spec.n_out)))
            store.add(f"{prefix}{i}.b", rng.uniform(-bound, bound, spec.n_out))
        elif spec.kind is Kind.LAYER_NORM:
            store.add(f"{prefix}{i}.gamma", np.ones(spec.n_in))
            store.add(f"{prefix}{i}.beta", np.zeros(spec.n_in))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample normalisation over the last axis with variance floor ``eps``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    centred = x.value - x.value.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv

    def vjp(g):
        gx = None
        if _wants(x):
            gh = g * gamma.value
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        gg = _unbroadcast(g * xhat, gamma.shape) if _wants(gamma) else None
        gb = _unbroadcast(g, beta.shape) if _wants(beta) else None
        return gx, gg, gb
    return _node(xhat * gamma.value + beta.value, (x, gamma, beta), vjp)


def forward(net, params: ParamStore, x, train_mode: bool = False, rng=None, prefix: str = "") -> Tensor:
    """Run a chain of :class:`LayerSpec` on a batch ``x`` of shape ``(B, n_in)``."""
    h = as_tensor(x)
    for i, spec in enumerate(net):
        k = spec.kind
        if k is Kind.AFFINE:
            if h.shape[-1] != spec.n_in:
                raise ValueError(f"layer {i}: expected {spec.n_in} features, got {h.shape[-1]}")
            h = affine(h, params[f"{prefix}{i}.W"], params[f"{prefix}{i}.b"])
        elif k is Kind.LEAKY_RELU:
            h = leaky_relu(h, spec.slope)
        elif k is Kind.LAYER_NORM:
            h = layer_norm(h, params[f"{prefix}{i}.gamma"], params[f"{prefix}{i}.beta"])
        elif k is Kind.DROPOUT:
            if train_mode and spec.rate > 0.0:
                if rng is None:
                    raise ValueError("dropout in train mode needs an rng")
                keep = rng.random(h.shape) >= spec.rate
                h = h * (keep / (1.0 - spec.rate))
        elif k is Kind.SIGMOID:
            h = sigmoid(h)
        elif k is Kind.SOFTPLUS:
            h = softplus(h)
    return h


def rmsprop_step(params: ParamStore, lr: float, decay: float = 0.99, eps: float = 1e-8,
                 prefix: str = "") -> None:
    """``acc = decay*acc + (1-decay)*g^2``; ``p -= lr*g/(sqrt(acc)+eps)``; clears grads."""
    for name in params.names(prefix):
        t = params.params[name]
        g = t.grad
        if g is None:
            continue
        acc = params.accum[name]
        acc *= decay
        acc += (1.0 - decay) * g * g
        t.value = t.value - lr * g / (np.sqrt(acc) + eps)
        t.grad = None
