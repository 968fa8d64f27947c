"""Werner-like and Bell-diagonal state families, usefulness criteria and regions.

Bell-diagonal states live in the tetrahedron with vertices A=(1,-1,1),
B=(-1,1,1), C=(1,1,-1), D=(-1,-1,-1) in ``c``-space. Every task region is
the union of four corner tetrahedra, one per vertex ``v``, cut off by the
plane ``v . c = threshold``:

* teleportation: ``v . c > 1`` (equivalently ``|c1| + |c2| + |c3| > 1``)
* non-local broadcasting: ``v . c > 5/3``
* local broadcasting: ``v . c > 9/4``

For Werner-like states both broadcasting tasks use PPT entanglement.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import qstate
from .linalg import PSD_TOL


class Family(str, enum.Enum):
    WERNER_LIKE = "werner_like"
    BELL_DIAGONAL = "bell_diagonal"


class Task(str, enum.Enum):
    TELEPORTATION = "teleportation"
    LOCAL_BROADCAST = "local_broadcast"
    NONLOCAL_BROADCAST = "nonlocal_broadcast"


#: Task multiplier on the base task-loss weight.
M_TASK = {
    Task.TELEPORTATION: 1.0,
    Task.NONLOCAL_BROADCAST: 1.2,
    Task.LOCAL_BROADCAST: 1.5,
}

VERTICES = {
    "A": (1, -1, 1),
    "B": (-1, 1, 1),
    "C": (1, 1, -1),
    "D": (-1, -1, -1),
}
VERTEX_SIGNS = np.array(list(VERTICES.values()), dtype=float)

#: Signed-sum threshold ``v . c`` bounding each task's corner regions.
REGION_THRESHOLD = {
    Task.TELEPORTATION: Fraction(1),
    Task.NONLOCAL_BROADCAST: Fraction(5, 3),
    Task.LOCAL_BROADCAST: Fraction(9, 4),
}

# Values within this distance of a boundary are classified as not useful.
BOUNDARY_TOL = 1e-9


def parse_family(value) -> Family:
    return value if isinstance(value, Family) else Family(str(value).lower().replace("-", "_"))


def parse_task(value) -> Task:
    return value if isinstance(value, Task) else Task(str(value).lower().replace("-", "_"))


@dataclass(frozen=True)
class WernerLikeParams:
    p: float
    alpha: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0) or not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"Werner-like parameters out of range: p={self.p}, alpha={self.alpha}")

    @property
    def beta(self) -> float:
        return math.sqrt(max(0.0, 1.0 - self.alpha**2))

    def as_dict(self) -> dict:
        return {"p": self.p, "alpha": self.alpha}


@dataclass(frozen=True)
class BellDiagonalParams:
    c: tuple[float, float, float]

    def __post_init__(self):
        c = tuple(float(x) for x in self.c)
        object.__setattr__(self, "c", c)
        if len(c) != 3 or any(abs(x) > 1.0 for x in c):
            raise ValueError(f"Bell-diagonal coefficients must lie in [-1, 1]: {c}")
        low = float(np.min(bell_diagonal_eigenvalues(c)))
        if low < -1e-12:
            raise ValueError(f"c={c} is not a valid state (eigenvalue {low:.4g})")

    def as_dict(self) -> dict:
        return {"c": list(self.c)}


def params_from_dict(family, d: dict):
    family = parse_family(family)
    if family is Family.WERNER_LIKE:
        return WernerLikeParams(float(d["p"]), float(d["alpha"]))
    return BellDiagonalParams(tuple(d["c"]))


def bell_diagonal_eigenvalues(c) -> np.ndarray:
    """``lambda_mn = (1 + (-1)^m c1 - (-1)^(m+n) c2 + (-1)^n c3) / 4``, ordered (00, 01, 10, 11)."""
    c = np.asarray(c, dtype=float)
    out = []
    for m in (0, 1):
        for n in (0, 1):
            out.append(0.25 * (1 + (-1) ** m * c[..., 0] - (-1) ** (m + n) * c[..., 1] + (-1) ** n * c[..., 2]))
    return np.stack(out, axis=-1)


def werner_like_state(params: WernerLikeParams) -> np.ndarray:
    """``p |psi><psi| + (1 - p) I/4`` with ``|psi> = alpha|00> + beta|11>``."""
    psi = np.array([params.alpha, 0.0, 0.0, params.beta], dtype=complex)
    return params.p * qstate.projector(psi) + (1.0 - params.p) * np.eye(4, dtype=complex) / 4


def werner_like_bloch(params: WernerLikeParams) -> np.ndarray:
    """Same state assembled from its local vectors and correlation tensor."""
    p, a, b = params.p, params.alpha, params.beta
    x = np.array([0.0, 0.0, p * (a * a - b * b)])
    t = np.diag([2 * p * a * b, -2 * p * a * b, p])
    return qstate.bloch_compose(x, x, t)


def bell_diagonal_state(params: BellDiagonalParams) -> np.ndarray:
    c = params.c
    rho = np.eye(4, dtype=complex)
    for k in range(3):
        rho = rho + c[k] * qstate.PAULI_PRODUCTS[k + 1, k + 1]
    return rho / 4


def make_state(family, params) -> np.ndarray:
    if parse_family(family) is Family.WERNER_LIKE:
        return werner_like_state(params)
    return bell_diagonal_state(params)


def vertex_statistic(c) -> np.ndarray:
    """Largest signed sum ``v . c`` over the four tetrahedron vertices."""
    c = np.asarray(c, dtype=float)
    return np.max(c @ VERTEX_SIGNS.T, axis=-1)


def offfamily_residual(family, rho) -> np.ndarray:
    """Distance of a candidate's Bloch form from the family's manifold."""
    a, b, t = qstate.bloch_decompose(rho)
    off = t - t * np.eye(3)
    off_norm = np.sqrt(np.sum(off**2, axis=(-2, -1)))
    if parse_family(family) is Family.BELL_DIAGONAL:
        return np.linalg.norm(a, axis=-1) + np.linalg.norm(b, axis=-1) + off_norm
    local = np.concatenate([a[..., :2], b[..., :2]], axis=-1)
    return (np.linalg.norm(local, axis=-1) + np.abs(a[..., 2] - b[..., 2])
            + np.abs(t[..., 0, 0] + t[..., 1, 1]) + off_norm)


def task_statistic(family, task, rho) -> np.ndarray:
    """The scalar each criterion thresholds, for raw (possibly invalid) candidates.

    Teleportation: ``N``. Bell-diagonal broadcasting: best vertex signed sum of
    ``diag(T)``. Werner-like broadcasting: ``-min_eig_pt``.
    """
    family, task = parse_family(family), parse_task(task)
    if task is Task.TELEPORTATION:
        return qstate.teleportation_score(rho)[0]
    if family is Family.BELL_DIAGONAL:
        t = qstate.bloch_decompose(rho).t
        return vertex_statistic(np.diagonal(t, axis1=-2, axis2=-1))
    return -qstate.min_eig_pt(rho)


def task_threshold(family, task) -> float:
    family, task = parse_family(family), parse_task(task)
    if task is Task.TELEPORTATION:
        return 1.0
    if family is Family.BELL_DIAGONAL:
        return float(REGION_THRESHOLD[task])
    return 0.0


def criterion(family, task, state) -> np.ndarray:
    """Whether a state (or parameter set) is useful for ``task``.

    ``state`` may be a params object, a 4x4 matrix or a stack of matrices.
    Ties within ``1e-9`` of a boundary count as not useful.
    """
    family, task = parse_family(family), parse_task(task)
    if isinstance(state, (WernerLikeParams, BellDiagonalParams)):
        state = make_state(family, state)
    stat = task_statistic(family, task, state)
    if family is Family.WERNER_LIKE and task is not Task.TELEPORTATION:
        return stat > PSD_TOL
    return stat > task_threshold(family, task) + BOUNDARY_TOL


def param_criterion(family, task, params) -> bool:
    """Closed-form criterion evaluated directly on parameters."""
    family, task = parse_family(family), parse_task(task)
    if family is Family.WERNER_LIKE:
        p, a = params.p, params.alpha
        if task is Task.TELEPORTATION:
            return p * (1 + 4 * a * params.beta) > 1 + BOUNDARY_TOL
        return (1 - p) / 4 - p * a * params.beta < -PSD_TOL
    stat = float(vertex_statistic(params.c))
    return stat > float(REGION_THRESHOLD[task]) + BOUNDARY_TOL


class AcceptanceError(RuntimeError):
    """Rejection sampling accepted too few proposals."""


def _unit_key(values, grain=1e-12):
    return tuple(int(round(v / grain)) for v in values)


def sample_dataset(family, task, n: int, seed: int, *, max_proposals: int = 10_000_000,
                   batch: int = 4096) -> tuple[list, dict]:
    """Rejection-sample ``n`` unique useful states.

    Werner-like proposals draw ``p ~ U[0, 1]`` and ``alpha = |cos(theta)|`` with
    ``theta ~ U[0, 2pi)``; Bell-diagonal proposals draw ``c ~ U[-1, 1]^3`` and
    keep valid states only. Returns ``(records, summary)`` where each record is
    ``(params, rho)``.
    """
    family, task = parse_family(family), parse_task(task)
    if n < 1:
        raise ValueError("n >= 1 required")
    rng = np.random.default_rng(seed)
    records, seen = [], set()
    proposals = 0
    while len(records) < n:
        if proposals >= max_proposals:
            break
        m = min(batch, max_proposals - proposals)
        proposals += m
        if family is Family.WERNER_LIKE:
            p = rng.uniform(0.0, 1.0, m)
            alpha = np.abs(np.cos(rng.uniform(0.0, 2 * np.pi, m)))
            beta = np.sqrt(np.maximum(0.0, 1 - alpha**2))
            if task is Task.TELEPORTATION:
                ok = p * (1 + 4 * alpha * beta) > 1 + BOUNDARY_TOL
            else:
                ok = (1 - p) / 4 - p * alpha * beta < -PSD_TOL
            cands = [WernerLikeParams(float(a), float(b)) for a, b in zip(p[ok], alpha[ok])]
        else:
            c = rng.uniform(-1.0, 1.0, (m, 3))
            valid = np.min(bell_diagonal_eigenvalues(c), axis=1) >= 0.0
            ok = valid & (vertex_statistic(c) > float(REGION_THRESHOLD[task]) + BOUNDARY_TOL)
            cands = [BellDiagonalParams(tuple(row)) for row in c[ok].tolist()]
        for prm in cands:
            key = _unit_key(prm.as_dict()["c"] if family is Family.BELL_DIAGONAL
                            else (prm.p, prm.alpha))
            if key in seen:
                continue
            seen.add(key)
            records.append((prm, make_state(family, prm)))
            if len(records) == n:
                break
    rate = len(records) / max(proposals, 1)
    if len(records) < n:
        raise AcceptanceError(
            f"only {len(records)} of {n} states accepted after {proposals} proposals "
            f"(rate {rate:.2e}); criterion misconfigured?")
    if proposals >= max_proposals and rate < 1e-4:
        raise AcceptanceError(f"acceptance rate {rate:.2e} below 1e-4")
    summary = {"n": n, "acceptance_rate": rate, "seed": seed, "proposals": proposals,
               "criterion": criterion_name(family, task)}
    return records, summary


def criterion_name(family, task) -> str:
    family, task = parse_family(family), parse_task(task)
    if task is Task.TELEPORTATION:
        return "N(rho) > 1"
    if family is Family.WERNER_LIKE:
        return "min eig(rho^T_B) < 0"
    return f"max_v v.c > {REGION_THRESHOLD[task]}"


def _frac(x: Fraction):
    return x.numerator if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def corner_region(vertex: str, task) -> list[tuple[Fraction, Fraction, Fraction]]:
    """Exact corners of the sub-tetrahedron cut from ``vertex`` for ``task``.

    The cut plane ``v . c = threshold`` meets each edge leaving the vertex at
    the point that keeps one coordinate ``k`` at the vertex value and scales
    the other two by ``(threshold - 1) / 2``.
    """
    task = parse_task(task)
    v = [Fraction(x) for x in VERTICES[vertex]]
    scale = (REGION_THRESHOLD[task] - 1) / 2
    # corner order follows the published vertex lists
    order = _teleport_order(vertex) if task is Task.TELEPORTATION else (2, 0, 1)
    corners = [tuple(v)]
    for k in order:
        corners.append(tuple(v[j] if j == k else v[j] * scale for j in range(3)))
    return corners


def _teleport_order(vertex: str):
    return {"D": (0, 1, 2), "C": (1, 0, 2), "B": (0, 1, 2), "A": (1, 2, 0)}[vertex]


def octahedron_faces() -> list[list[tuple[int, int, int]]]:
    """Eight triangular faces of ``|c1| + |c2| + |c3| = 1``."""
    faces = []
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                faces.append([(sx, 0, 0), (0, sy, 0), (0, 0, sz)])
    return faces


def werner_boundary(resolution: int) -> list[dict]:
    """Points of ``p = 1 / (1 + 4 alpha sqrt(1 - alpha^2))`` for ``alpha`` on a uniform grid."""
    if resolution < 2:
        raise ValueError("resolution >= 2 required")
    out = []
    for alpha in np.linspace(0.0, 1.0, resolution):
        alpha = float(alpha)
        beta = math.sqrt(max(0.0, 1.0 - alpha * alpha))
        out.append({"alpha": alpha, "p": 1.0 / (1.0 + 4.0 * alpha * beta)})
    return out


def werner_boundary_p(alpha: float) -> float:
    beta = math.sqrt(max(0.0, 1.0 - alpha * alpha))
    return 1.0 / (1.0 + 4.0 * alpha * beta)


def region_export(family, task, resolution: int = 101) -> dict:
    """Plot-ready geometry for a family/task pair.

    Rational coordinates are emitted both as exact strings (``"-5/8"``) under
    ``"exact"`` and as floats.
    """
    family, task = parse_family(family), parse_task(task)
    if resolution < 2:
        raise ValueError("resolution >= 2 required")
    if family is Family.BELL_DIAGONAL:
        regions = []
        for name in VERTICES:
            corners = corner_region(name, task)
            regions.append({
                "vertex": name,
                "corners": [[float(x) for x in pt] for pt in corners],
                "exact": [[_frac(x) for x in pt] for pt in corners],
            })
        return {
            "family": family.value,
            "task": task.value,
            "tetrahedron": {k: list(v) for k, v in VERTICES.items()},
            "octahedron_faces": [[list(p) for p in f] for f in octahedron_faces()],
            "threshold": _frac(REGION_THRESHOLD[task]),
            "regions": regions,
        }
    return {
        "family": family.value,
        "task": task.value,
        "boundary": werner_boundary(resolution),
        "useful_side": "p > boundary",
    }
