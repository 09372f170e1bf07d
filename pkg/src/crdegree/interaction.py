"""Interaction matrices M(S), their least eigenpairs and the total degree."""

from dataclasses import dataclass
import itertools

import numpy as np

from .errors import ConditionViolation, DegenerateConfigurationError
from .morse import CritPoint, condition_one, find_critical_points
from .sphere import ManifoldFn, green_function

MU_TOL = 1e-8
CONDITION_TOL = 1e-8
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class InteractionMatrix:
    subset: tuple
    entries: np.ndarray
    least_eig: float
    least_vec: np.ndarray


@dataclass(frozen=True)
class AdmissibleSubset:
    indices: tuple
    mu: float
    cluster_sign: int


@dataclass(frozen=True)
class DegreeReport:
    critical_points: tuple
    admissible_subsets: tuple
    total_degree: int
    existence: bool


def jacobi_eigh(A, tol=1e-15, max_sweeps=100):
    """Cyclic Jacobi eigen decomposition of a symmetric matrix.

    Returns (eigenvalues ascending, eigenvectors as columns)."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.linalg.norm(A), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/columns p and q
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def least_eigenpair(M):
    """(mu, v) with v normalized; if all off-diagonals are <= 0 the returned
    v is the componentwise nonnegative representative."""
    M = np.asarray(M, dtype=float)
    w, V = jacobi_eigh(M)
    v = V[:, 0].copy()
    off = M[~np.eye(len(M), dtype=bool)]
    if off.size == 0 or np.all(off <= 0):
        if np.sum(v) < 0:
            v = -v
    else:
        k = np.flatnonzero(np.abs(v) > 1e-12)[0]
        if v[k] < 0:
            v = -v
    return float(w[0]), v


def build_matrix(S):
    """M(S) for a list of critical points."""
    S = tuple(S)
    n = len(S)
    for i, j in itertools.combinations(range(n), 2):
        if np.linalg.norm(S[i].location.real() - S[j].location.real()) < 1e-9:
            raise ValueError(f"coincident critical points {i} and {j}")
    M = np.zeros((n, n))
    for j, cp in enumerate(S):
        M[j, j] = -cp.delta_b_k / cp.k_value ** 2 - 32.0 * cp.mass / cp.k_value
    for j, k in itertools.combinations(range(n), 2):
        gjk = green_function(S[k].location, S[j].location)
        gkj = green_function(S[j].location, S[k].location)
        if abs(gjk - gkj) > SYMMETRY_TOL * max(abs(gjk), 1.0):
            raise ValueError("Green function is not symmetric on this pair")
        g = 0.5 * (gjk + gkj)
        M[j, k] = M[k, j] = -32.0 * g / np.sqrt(S[j].k_value * S[k].k_value)
    mu, v = least_eigenpair(M)
    return InteractionMatrix(S, M, mu, v)


def cluster_degree(indices):
    """(-1)^(sum of Morse indices); accepts CritPoints or integers."""
    total = sum(c.morse_index if isinstance(c, CritPoint) else int(c) for c in indices)
    return -1 if total % 2 else 1


def check_condition_one(crit):
    vals = np.array([condition_one(c) for c in crit])
    scale = max(1.0, float(np.max(np.abs(vals)))) if len(vals) else 1.0
    for i, v in enumerate(vals):
        if abs(v) < CONDITION_TOL * scale:
            raise ConditionViolation(f"condition one vanishes at critical point {i} (value {v:.3e})")
    return vals


def enumerate_admissible(crit):
    """All nonempty subsets of points with positive condition value, in
    lexicographic order of their index tuples, each with mu(M(S))."""
    vals = check_condition_one(crit)
    positive = [i for i, v in enumerate(vals) if v > 0]
    subsets = []
    for r in range(1, len(positive) + 1):
        subsets.extend(itertools.combinations(positive, r))
    out = []
    for idx in sorted(subsets):
        m = build_matrix([crit[i] for i in idx])
        if abs(m.least_eig) < MU_TOL * np.linalg.norm(m.entries):
            raise DegenerateConfigurationError(
                f"least eigenvalue of M(S) is numerically zero for subset {idx}", subset=idx, mu=m.least_eig)
        out.append(AdmissibleSubset(idx, m.least_eig, cluster_degree([crit[i] for i in idx])))
    return out


def degree_from_subsets(subsets):
    return -1 - sum(s.cluster_sign for s in subsets if s.mu > 0)


def total_degree(K: ManifoldFn, seed=0, crit=None):
    """Full pipeline from K to the degree report."""
    crit = find_critical_points(K, seed=seed) if crit is None else crit
    subsets = enumerate_admissible(crit)
    deg = degree_from_subsets(subsets)
    return DegreeReport(tuple(crit), tuple(subsets), deg, deg != 0)
