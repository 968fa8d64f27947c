"""Evaluation metrics: task accuracy, cross-set fidelity and Pauli-space FID."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import families, linalg, qstate

#: Ridge added to both feature covariances before the matrix square roots.
FID_RIDGE = 1e-10
#: A raw candidate counts towards accuracy only if it is a state to this tolerance.
VALIDITY_TOL = 1e-3


@dataclass
class Metrics:
    accuracy: float
    cross_fidelity: float
    fid: float
    offfamily_residual: float = 0.0
    valid_fraction: float = 1.0
    criterion_rate: float = 0.0
    losses: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def frechet_distance(feat_a, feat_b, ridge: float = FID_RIDGE) -> float:
    """``||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``.

    Covariances use ``1/(n-1)`` normalisation plus ``ridge * I``.
    """
    feat_a = np.asarray(feat_a, dtype=float)
    feat_b = np.asarray(feat_b, dtype=float)
    if len(feat_a) < 2 or len(feat_b) < 2:
        raise ValueError("need at least two samples per set for a covariance")
    mu_a, mu_b = feat_a.mean(axis=0), feat_b.mean(axis=0)
    eye = np.eye(feat_a.shape[1])
    cov_a = np.cov(feat_a, rowvar=False, ddof=1) + ridge * eye
    cov_b = np.cov(feat_b, rowvar=False, ddof=1) + ridge * eye
    root_a = linalg.psd_sqrt(cov_a, cutoff=False)
    cross = linalg.trace_sqrt(root_a @ cov_b @ root_a, cutoff=False)
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)


def fid(generated, train) -> float:
    return frechet_distance(qstate.pauli_embedding(generated), qstate.pauli_embedding(train))


def is_valid(states, tol: float = VALIDITY_TOL) -> np.ndarray:
    return (qstate.psd_violation(states) <= tol) & (qstate.trace_violation(states) <= tol)


def accuracy(generated, family, task, tol: float = VALIDITY_TOL) -> float:
    """Fraction of raw candidates that are states (within ``tol``) and meet the task criterion."""
    generated = qstate.as_candidate(generated)
    ok = families.criterion(family, task, generated) & is_valid(generated, tol)
    return float(np.mean(ok))


def criterion_rate(generated, family, task) -> float:
    """Fraction of raw candidates meeting the task criterion, validity ignored."""
    return float(np.mean(families.criterion(family, task, qstate.as_candidate(generated))))


def cross_fidelity(generated, train, convention: str = "squared") -> float:
    """Mean Uhlmann fidelity over all (generated, train) pairs.

    Generated candidates are first projected onto the nearest valid state.
    """
    g = qstate.nearest_state(generated)
    return float(np.mean(qstate.pairwise_fidelity(g, train, convention)))


def self_fidelity_baseline(train, convention: str = "squared") -> float:
    """Mean fidelity over distinct ordered pairs of the training set."""
    train = qstate.as_candidate(train)
    n = len(train)
    if n < 2:
        raise ValueError("need at least two states")
    f = qstate.pairwise_fidelity(train, train, convention)
    return float((f.sum() - np.trace(f)) / (n * (n - 1)))


def evaluate(generated, train, family, task, convention: str = "squared") -> Metrics:
    generated = qstate.as_candidate(generated)
    train = qstate.as_candidate(train)
    if len(generated) == 0 or len(train) == 0:
        raise ValueError("both sets must be non-empty")
    return Metrics(
        accuracy=accuracy(generated, family, task),
        cross_fidelity=cross_fidelity(generated, train, convention),
        fid=fid(generated, train),
        offfamily_residual=float(np.mean(families.offfamily_residual(family, generated))),
        valid_fraction=float(np.mean(is_valid(generated))),
        criterion_rate=criterion_rate(generated, family, task),
    )
