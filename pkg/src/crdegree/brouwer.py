"""Finite-dimensional Brouwer degree by dense multistart root finding."""

import itertools

import numpy as np

from .errors import BrouwerError

DEFAULT_STARTS = {1: 256, 2: 48, 3: 16, 4: 12}


def _fd_jacobian(F, X, h):
    m, n = X.shape
    J = np.empty((m, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h[k]
        J[:, :, k] = (F(X + e) - F(X - e)) / (2.0 * h[k])
    return J


def _newton_step(J, R):
    try:
        return np.linalg.solve(J, R[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.einsum("mij,mj->mi", np.linalg.pinv(J), R)


def start_grid(lo, hi, per_dim):
    axes = [lo[k] + (np.arange(per_dim) + 0.5) * (hi[k] - lo[k]) / per_dim for k in range(len(lo))]
    return np.array(list(itertools.product(*axes)), dtype=float)


def find_preimages(F, lo, hi, target, starts_per_dim=None, jac=None, iters=60, tol=1e-11):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = len(lo)
    if n > 4:
        raise ValueError("the engine is capped at dimension 4")
    per_dim = starts_per_dim or DEFAULT_STARTS[n]
    h = 1e-7 * (hi - lo)
    X = start_grid(lo, hi, per_dim)
    G = (lambda Y: F(Y) - target)
    J_of = jac if jac is not None else (lambda Y: _fd_jacobian(F, Y, h))
    scale = max(1.0, float(np.max(np.abs(F(start_grid(lo, hi, 3))))))
    active = np.arange(len(X))
    small = 1e-14 * float(np.linalg.norm(hi - lo))
    for _ in range(iters):
        step = _newton_step(J_of(X[active]), G(X[active]))
        X[active] = np.clip(X[active] - step, lo, hi)
        # starts whose Newton step has stalled are frozen; the rest keep iterating
        active = active[np.linalg.norm(step, axis=1) > small]
        if not len(active):
            break
    R = np.linalg.norm(G(X), axis=1)
    roots = X[R <= tol * scale]
    diam = float(np.linalg.norm(hi - lo))
    out = []
    for r in roots:
        if all(np.linalg.norm(r - s) > 1e-7 * diam for s in out):
            out.append(r)
    return np.array(out).reshape(-1, n), J_of


def brouwer_degree(F, lo, hi, target=None, starts_per_dim=None, jac=None, regular_tol=1e-8, boundary_tol=1e-9):
    """deg(F, box, target) for a vectorized map F: (m, n) -> (m, n) on the box
    prod [lo_k, hi_k], n <= 4."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    target = np.zeros(len(lo)) if target is None else np.asarray(target, dtype=float)
    roots, J_of = find_preimages(F, lo, hi, target, starts_per_dim, jac)
    deg = 0
    for r in roots:
        if np.any(r - lo <= boundary_tol * (hi - lo)) or np.any(hi - r <= boundary_tol * (hi - lo)):
            raise BrouwerError(f"zero on the boundary at {r}")
        J = J_of(r[None, :])[0]
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[-1] <= regular_tol * max(1.0, sv[0]):
            raise BrouwerError(f"target is not a regular value (singular Jacobian at {r})")
        deg += 1 if np.linalg.det(J) > 0 else -1
    return deg


def product_map(F, nF, G):
    """(x, y) -> (F(x), G(y)) for vectorized maps."""
    def H(X):
        return np.concatenate([F(X[:, :nF]), G(X[:, nF:])], axis=1)
    return H
