"""Generators, discriminator and the physics-informed losses.

States travel through the graph as a pair of ``(B, 4, 4)`` tensors holding
the real and imaginary parts of each candidate density matrix.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import families, qstate
from .autodiff import Affine, Dropout, LayerNorm, LeakyReLU, ParamStore, Sigmoid, Tensor
from .families import Family, Task

LATENT_DIM = 100
HIDDEN = 256
DIM = 4
LDL_EPS = 1e-6
TRACE_GUARD = 1e-12
LOG_CLAMP = 1e-12
DIVERSITY_MARGIN = 0.1
WERNER_BROADCAST_MARGIN = 1e-3
DROPOUT_RATE = 0.3
LEAKY_SLOPE = 0.2


class GeneratorKind(str, enum.Enum):
    CHOLESKY = "cholesky"
    LDL = "ldl"
    DIRECT = "direct"


def parse_kind(value) -> GeneratorKind:
    return value if isinstance(value, GeneratorKind) else GeneratorKind(str(value).lower())


@dataclass(frozen=True)
class LossWeights:
    lambda_psd: float = 10.0
    lambda_trace: float = 10.0
    lambda_herm: float = 5.0
    lambda_task_base: float = 5.0
    lambda_div: float = 0.5
    m_task: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be >= 0")

    @property
    def lambda_task(self) -> float:
        return self.lambda_task_base * self.m_task

    @classmethod
    def for_task(cls, task, **overrides) -> "LossWeights":
        return cls(m_task=families.M_TASK[families.parse_task(task)], **overrides)


def head_size(kind, d: int = DIM) -> int:
    """Real outputs needed to parameterise one ``d x d`` candidate."""
    kind = parse_kind(kind)
    return 2 * d * d if kind is GeneratorKind.DIRECT else d * d


# network definitions ----------------------------------------------------------

def generator_blocks(kind, d: int = DIM, hidden: int = HIDDEN):
    inp = [Affine(LATENT_DIM, hidden), LayerNorm(hidden), LeakyReLU(LEAKY_SLOPE)]
    res = [Affine(hidden, hidden), LayerNorm(hidden), LeakyReLU(LEAKY_SLOPE)]
    head = [Affine(hidden, head_size(kind, d))]
    return {"G.in.": inp, "G.res.": res, "G.head.": head}


DISCRIMINATOR = [
    Affine(2 * DIM * DIM, 256), LeakyReLU(LEAKY_SLOPE), LayerNorm(256), Dropout(DROPOUT_RATE),
    Affine(256, 512), LeakyReLU(LEAKY_SLOPE), LayerNorm(512), Dropout(DROPOUT_RATE),
    Affine(512, 256), LeakyReLU(LEAKY_SLOPE), LayerNorm(256), Dropout(DROPOUT_RATE),
    Affine(256, 128), LeakyReLU(LEAKY_SLOPE), LayerNorm(128), Dropout(DROPOUT_RATE),
    Affine(128, 1), Sigmoid(),
]


def init_params(kind, rng: np.random.Generator, d: int = DIM, hidden: int = HIDDEN,
                discriminator: bool = True) -> ParamStore:
    store = ParamStore()
    for prefix, net in generator_blocks(kind, d, hidden).items():
        ad.init_layers(store, net, rng, prefix)
    if discriminator:
        ad.init_layers(store, DISCRIMINATOR, rng, "D.")
    return store


def generator_head(params: ParamStore, z, kind, residual: bool = True, d: int = DIM) -> Tensor:
    """Trunk ``100 -> 256 -> 256`` with a skip across the second block, then the head."""
    blocks = generator_blocks(kind, d, params["G.in.0.W"].shape[1])
    h = ad.forward(blocks["G.in."], params, z, prefix="G.in.")
    r = ad.forward(blocks["G.res."], params, h, prefix="G.res.")
    h = h + r if residual else r
    return ad.forward(blocks["G.head."], params, h, prefix="G.head.")


# assembly ---------------------------------------------------------------------

def _scatter(rows, cols, d=DIM):
    """Constant matrix mapping a parameter vector into flattened ``d x d`` slots."""
    m = np.zeros((len(rows), d * d))
    m[np.arange(len(rows)), np.asarray(rows) * d + np.asarray(cols)] = 1.0
    return m


_TRIL = np.tril_indices(DIM, k=-1)
_DIAG = (np.arange(DIM), np.arange(DIM))
_NSUB = len(_TRIL[0])
_TRIL_MAP = _scatter(*_TRIL)
_DIAG_MAP = _scatter(*_DIAG)


def _lower_factor(head: Tensor, unit: bool):
    """Split a head vector into ``(L_re, L_im, rest)`` for a lower-triangular factor."""
    b = head.shape[0]
    if unit:
        sub_re = head[:, :_NSUB]
        sub_im = head[:, _NSUB:2 * _NSUB]
        lre = ad.matmul(sub_re, _TRIL_MAP) + np.eye(DIM).reshape(-1)
        rest = head[:, 2 * _NSUB:]
    else:
        diag = head[:, :DIM]
        sub_re = head[:, DIM:DIM + _NSUB]
        sub_im = head[:, DIM + _NSUB:DIM + 2 * _NSUB]
        lre = ad.matmul(diag, _DIAG_MAP) + ad.matmul(sub_re, _TRIL_MAP)
        rest = None
    lim = ad.matmul(sub_im, _TRIL_MAP)
    return lre.reshape(b, DIM, DIM), lim.reshape(b, DIM, DIM), rest


def _normalise(re: Tensor, im: Tensor):
    tr = ad.tsum(re * np.eye(DIM), axis=(-2, -1))
    guard = np.where(tr.value < TRACE_GUARD, TRACE_GUARD, 0.0)
    if guard.any():
        re = re + guard[:, None, None] * np.eye(DIM)
        tr = tr + DIM * guard
    inv = ad.reciprocal(tr).reshape(-1, 1, 1)
    return re * inv, im * inv


def assemble(kind, head: Tensor):
    """Map raw head outputs ``(B, head_size)`` to candidate states ``(re, im)``.

    Cholesky: ``L L^H / Tr``. LDL: ``L D L^H / Tr`` with unit-diagonal ``L`` and
    ``D = softplus(d) + 1e-6``. Direct: ``(M + M^H) / 2`` with no normalisation.
    """
    kind = parse_kind(kind)
    b = head.shape[0]
    if kind is GeneratorKind.DIRECT:
        mre = head[:, :DIM * DIM].reshape(b, DIM, DIM)
        mim = head[:, DIM * DIM:].reshape(b, DIM, DIM)
        return (mre + mre.T) * 0.5, (mim - mim.T) * 0.5
    if kind is GeneratorKind.CHOLESKY:
        lre, lim, _ = _lower_factor(head, unit=False)
        re = ad.matmul(lre, lre.T) + ad.matmul(lim, lim.T)
        im = ad.matmul(lim, lre.T) - ad.matmul(lre, lim.T)
    else:
        lre, lim, dvec = _lower_factor(head, unit=True)
        dpos = (ad.softplus(dvec) + LDL_EPS).reshape(b, 1, DIM)
        lre_d, lim_d = lre * dpos, lim * dpos
        re = ad.matmul(lre_d, lre.T) + ad.matmul(lim_d, lim.T)
        im = ad.matmul(lim_d, lre.T) - ad.matmul(lre_d, lim.T)
    return _normalise(re, im)


def hermiticity_defect(head: Tensor) -> Tensor:
    """``||M - M^H||_1 / 2`` (entrywise complex modulus) of the raw Direct head."""
    b = head.shape[0]
    mre = head[:, :DIM * DIM].reshape(b, DIM, DIM)
    mim = head[:, DIM * DIM:].reshape(b, DIM, DIM)
    dre = mre - mre.T
    dim = mim + mim.T
    mod = ad.sqrt(ad.square(dre) + ad.square(dim))
    return ad.tsum(mod, axis=(-2, -1)) * 0.5


def generate(kind, params: ParamStore, z, train_mode: bool = False, residual: bool = True):
    """Return ``(re, im, head)`` tensors for a latent batch ``z`` of shape ``(B, 100)``."""
    z = ad.as_tensor(z)
    if z.ndim != 2 or z.shape[1] != LATENT_DIM:
        raise ValueError(f"latent batch must have shape (B, {LATENT_DIM}), got {z.shape}")
    head = generator_head(params, z, kind, residual)
    re, im = assemble(kind, head)
    return re, im, head


def to_complex(re, im) -> np.ndarray:
    re = re.value if isinstance(re, Tensor) else re
    im = im.value if isinstance(im, Tensor) else im
    return re + 1j * im


def sample_states(kind, params: ParamStore, n: int, rng: np.random.Generator,
                  residual: bool = True) -> np.ndarray:
    z = rng.standard_normal((n, LATENT_DIM))
    re, im, _ = generate(kind, params.frozen("G."), z, residual=residual)
    return to_complex(re, im)


def flatten_states(re, im) -> Tensor:
    """All 16 real parts then all 16 imaginary parts, row-major."""
    re, im = ad.as_tensor(re), ad.as_tensor(im)
    b = re.shape[0]
    return ad.concat([re.reshape(b, DIM * DIM), im.reshape(b, DIM * DIM)], axis=-1)


def discriminate(params: ParamStore, re, im, train_mode: bool = False, rng=None) -> Tensor:
    x = flatten_states(re, im)
    out = ad.forward(DISCRIMINATOR, params, x, train_mode=train_mode, rng=rng, prefix="D.")
    return out.reshape(-1)


# losses -----------------------------------------------------------------------

def _pauli_maps():
    # Tr(rho P) = sum_ab rho_ab P_ba, split over real/imaginary channels.
    p = qstate.PAULI_PRODUCTS.reshape(16, DIM, DIM)
    pt = np.swapaxes(p, -1, -2).reshape(16, DIM * DIM).T
    return np.real(pt).copy(), -np.imag(pt).copy()


_EMBED_RE, _EMBED_IM = _pauli_maps()
_T_INDEX = np.array([5, 6, 7, 9, 10, 11, 13, 14, 15])
_TDIAG_INDEX = np.array([5, 10, 15])
_PT_PERM = np.arange(16).reshape(2, 2, 2, 2).swapaxes(1, 3).reshape(-1)


def embedding(re, im) -> Tensor:
    """Differentiable 16-dim Pauli-expectation vector of each candidate."""
    re, im = ad.as_tensor(re), ad.as_tensor(im)
    b = re.shape[0]
    return (ad.matmul(re.reshape(b, 16), _EMBED_RE)
            + ad.matmul(im.reshape(b, 16), _EMBED_IM))


def trace_loss(re) -> Tensor:
    tr = ad.tsum(ad.as_tensor(re) * np.eye(DIM), axis=(-2, -1))
    return ad.absolute(tr - 1.0)


def teleportation_hinge(phi: Tensor) -> Tensor:
    t = phi[:, _T_INDEX].reshape(-1, 3, 3)
    fmax = (ad.nuclear_norm(t) * (1.0 / 3.0) + 1.0) * 0.5
    return ad.hinge(fmax, 2.0 / 3.0)


def bell_broadcast_hinge(phi: Tensor, threshold: float) -> Tensor:
    c = phi[:, _TDIAG_INDEX]
    s = ad.tmax(ad.matmul(c, families.VERTEX_SIGNS.T), axis=-1)
    return ad.hinge(s, threshold) * (1.0 / threshold)


def werner_broadcast_hinge(re, im) -> Tensor:
    re, im = ad.as_tensor(re), ad.as_tensor(im)
    b = re.shape[0]
    pre = re.reshape(b, 16)[:, _PT_PERM].reshape(b, DIM, DIM)
    pim = im.reshape(b, 16)[:, _PT_PERM].reshape(b, DIM, DIM)
    s = -ad.min_eigenvalue(pre, pim)
    return ad.hinge(s, WERNER_BROADCAST_MARGIN) * (1.0 / WERNER_BROADCAST_MARGIN)


def task_hinge(family, task, re, im, phi=None) -> Tensor:
    """Per-state task penalty, zero once the state clears its criterion's threshold."""
    family, task = families.parse_family(family), families.parse_task(task)
    if phi is None:
        phi = embedding(re, im)
    if task is Task.TELEPORTATION:
        return teleportation_hinge(phi)
    if family is Family.BELL_DIAGONAL:
        return bell_broadcast_hinge(phi, float(families.REGION_THRESHOLD[task]))
    return werner_broadcast_hinge(re, im)


def diversity_loss(phi: Tensor, margin: float = DIVERSITY_MARGIN) -> Tensor:
    """Mean over pairs ``i < j`` of ``max(0, margin - ||phi_i - phi_j||)``."""
    if phi.shape[0] < 2:
        return Tensor(0.0)
    return ad.mean(ad.hinge(ad.pairwise_distance(phi), margin))


def adversarial_loss(d_fake: Tensor) -> Tensor:
    return -ad.mean(ad.log(d_fake, clamp=LOG_CLAMP))


def loss_terms(kind, re, im, head, d_fake, family, task) -> dict:
    """Unweighted batch-mean loss components as tensors."""
    kind = parse_kind(kind)
    phi = embedding(re, im)
    terms = {
        "l_adv": adversarial_loss(d_fake),
        "l_trace": ad.mean(trace_loss(re)),
        "l_psd": ad.mean(ad.psd_violation(re, im)),
        "l_task": ad.mean(task_hinge(family, task, re, im, phi)),
        "l_div": diversity_loss(phi),
    }
    if kind is GeneratorKind.DIRECT:
        terms["l_herm"] = ad.mean(hermiticity_defect(head))
    else:
        terms["l_herm"] = Tensor(0.0)
    return terms


def combine(terms: dict, weights: LossWeights) -> Tensor:
    return (terms["l_adv"]
            + weights.lambda_trace * terms["l_trace"]
            + weights.lambda_psd * terms["l_psd"]
            + weights.lambda_herm * terms["l_herm"]
            + weights.lambda_task * terms["l_task"]
            + weights.lambda_div * terms["l_div"])


def generator_loss(kind, re, im, head, d_fake, weights: LossWeights, family, task):
    """Composite generator objective; returns ``(total, terms)``."""
    terms = loss_terms(kind, re, im, head, d_fake, family, task)
    return combine(terms, weights), terms


def discriminator_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """``-mean log D(real) - mean log(1 - D(fake))`` with logs clamped at 1e-12."""
    real_scores, fake_scores = ad.as_tensor(real_scores), ad.as_tensor(fake_scores)
    return (-ad.mean(ad.log(real_scores, clamp=LOG_CLAMP))
            - ad.mean(ad.log(1.0 - fake_scores, clamp=LOG_CLAMP)))
