"""Critical points of K restricted to S^3 and their Morse data."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc, norm

from .errors import NonPositiveError, NotMorseError
from .sphere import SpherePoint, ManifoldFn, chart_from_heisenberg, mass_constant, sublaplacian_sphere, NORTH

N_STARTS = 200
NEWTON_TOL = 1e-12
DEDUP_RADIUS = 1e-6
DEGENERACY = 1e-8


@dataclass(frozen=True)
class CritPoint:
    location: SpherePoint
    k_value: float
    grad_residual: float
    hessian_eigs: tuple
    morse_index: int
    delta_b_k: float
    mass: float


def tangent_frame(x):
    """Orthonormal tangent frame (ix, Jx, iJx) of S^3 at x, shape (..., 4, 3).
    The first vector is the Reeb direction, the other two span the contact plane."""
    x1, x2, x3, x4 = np.moveaxis(np.asarray(x, dtype=float), -1, 0)
    e0 = np.stack([-x2, x1, -x4, x3], axis=-1)
    e1 = np.stack([x3, -x4, -x1, x2], axis=-1)
    e2 = np.stack([x4, x3, -x2, -x1], axis=-1)
    return np.stack([e0, e1, e2], axis=-1)


def sphere_gradient(K: ManifoldFn, x):
    g = K.gradient(x)
    return g - np.sum(g * x, axis=-1, keepdims=True) * x


def riemannian_hessian(K: ManifoldFn, x):
    """Hessian of K|S^3 in the frame of tangent_frame (round metric)."""
    x = np.asarray(x, dtype=float)
    g = K.gradient(x)
    H = K.hessian(x)
    mu = np.sum(g * x, axis=-1)
    E = tangent_frame(x)
    B = np.einsum("...ai,...ab,...bj->...ij", E, H, E)
    return B - mu[..., None, None] * np.eye(3)


def quasi_uniform_starts(n, seed=0):
    """Deterministic low-discrepancy points on S^3 (scrambled Halton mapped
    through the Gaussian quantile and normalized)."""
    u = qmc.Halton(d=4, scramble=True, seed=seed).random(n)
    v = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _newton(K, x, iters=80):
    """Vectorized Newton on the Lagrange system grad K = mu x, |x| = 1."""
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    for _ in range(iters):
        g = K.gradient(x)
        H = K.hessian(x)
        mu = np.sum(g * x, axis=1)
        F = np.concatenate([g - mu[:, None] * x, 0.5 * (np.sum(x * x, axis=1) - 1.0)[:, None]], axis=1)
        J = np.zeros((len(x), 5, 5))
        J[:, :4, :4] = H - mu[:, None, None] * np.eye(4)
        J[:, :4, 4] = -x
        J[:, 4, :4] = x
        step = -np.einsum("nij,nj->ni", np.linalg.pinv(J), F)[:, :4]
        n = np.linalg.norm(step, axis=1, keepdims=True)
        step = np.where(n > 0.5, step * (0.5 / np.maximum(n, 1e-300)), step)
        x = x + step
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
    return x


def _grid_candidates(K, n=4096, k=12, seed=1):
    """Local minima of |grad_S K| on a dense point cloud."""
    pts = quasi_uniform_starts(n, seed=seed)
    gn = np.linalg.norm(sphere_gradient(K, pts), axis=1)
    _, nb = cKDTree(pts).query(pts, k=k + 1)
    is_min = np.all(gn[:, None] <= gn[nb[:, 1:]], axis=1)
    return pts[is_min]


def check_positive(K: ManifoldFn, n=10_000, seed=2):
    pts = quasi_uniform_starts(n, seed=seed)
    vals = K.evaluate(pts)
    if np.min(vals) <= 0:
        raise NonPositiveError(f"K is not positive on S^3 (min sample value {np.min(vals):.6g})")
    return float(np.min(vals))


def find_critical_points(K: ManifoldFn, seed=0, n_starts=N_STARTS, with_mass=True):
    """All critical points of K on S^3, sorted by (K value, coordinates)."""
    check_positive(K)
    starts = np.vstack([quasi_uniform_starts(n_starts, seed=seed), _grid_candidates(K)])
    x = _newton(K, starts)
    scale = max(1.0, float(np.max(np.abs(K.gradient(starts)))))
    res = np.linalg.norm(sphere_gradient(K, x), axis=1)
    x = x[res <= 1e3 * NEWTON_TOL * scale]
    found = []
    for p in x:
        if all(np.linalg.norm(p - q) > DEDUP_RADIUS for q in found):
            found.append(p)
    if not found:
        raise NotMorseError("no isolated critical point converged")
    found = np.array(found)
    B = riemannian_hessian(K, found)
    eigs = np.linalg.eigvalsh(B)
    big = np.max(np.abs(eigs))
    if big == 0 or np.any(np.abs(eigs) < DEGENERACY * big):
        raise NotMorseError("K is not Morse: degenerate critical point detected")
    vals = K.evaluate(found)
    order = np.lexsort(tuple(found.T[::-1]) + (np.round(vals, 12),))
    out = []
    for i in order:
        q = SpherePoint.from_real(found[i])
        out.append(CritPoint(
            location=q,
            k_value=float(vals[i]),
            grad_residual=float(np.linalg.norm(sphere_gradient(K, found[i]))),
            hessian_eigs=tuple(float(e) for e in eigs[i]),
            morse_index=int(np.sum(eigs[i] < 0)),
            delta_b_k=float(sublaplacian_sphere(K, q)),
            mass=float(mass_constant(q).constant_term) if with_mass else 0.0,
        ))
    return out


def euler_sum(points):
    return sum((-1) ** cp.morse_index for cp in points)


def condition_one(cp: CritPoint) -> float:
    """-Delta_b K / K - 32 A at the critical point."""
    return -cp.delta_b_k / cp.k_value - 32.0 * cp.mass


def gradient_diagnostic(u_family, K: ManifoldFn, pole: SpherePoint = NORTH):
    """|grad K(x_i)| M_i for every peak of a blow-up family; peaks are chart
    points around ``pole``."""
    out = []
    for peaks in u_family.peaks:
        for loc, M in peaks:
            q = chart_from_heisenberg(pole, loc).real()
            out.append(float(np.linalg.norm(sphere_gradient(K, q)) * M))
    return out


def growth_exponent(values, heights):
    """Slope of log(values) against log(heights)."""
    values = np.asarray(values, dtype=float)
    heights = np.asarray(heights, dtype=float)
    slope, _ = np.polyfit(np.log(heights), np.log(values), 1)
    return float(slope)
