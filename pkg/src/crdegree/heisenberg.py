"""Heisenberg group H^1: group law, dilations, Koranyi gauge, invariant
vector fields and quadrature in gauge-polar coordinates.

Points are (x, y, t) with z = x + iy. Most functions come in two flavours: one
taking ``HPoint`` values and an array-level one (suffix ``_xyt``) that accepts
numpy arrays or ``Jet`` objects componentwise.
"""

from dataclasses import dataclass

import numpy as np

from .dual import Jet, sqrt, value
from .errors import QuadratureError

# Normalization Delta_b = KAPPA (X^2 + Y^2). Fixed by requiring the flat
# Jerison-Lee identity -4 Delta_b U = U^3; see bubble.calibrate_kappa.
KAPPA = 1.0 / 16.0

FIELDS = ("X", "Y", "T", "Z", "Zbar", "Zr", "Xi")


@dataclass(frozen=True)
class HPoint:
    x: float
    y: float
    t: float

    def as_tuple(self):
        return (self.x, self.y, self.t)

    @property
    def z(self):
        return complex(self.x, self.y)


ORIGIN = HPoint(0.0, 0.0, 0.0)


def mul_xyt(x1, y1, t1, x2, y2, t2):
    # 2 Im(z conj(w)) = 2 (y1 x2 - x1 y2)
    return x1 + x2, y1 + y2, t1 + t2 + 2.0 * (y1 * x2 - x1 * y2)


def group_mul(p: HPoint, q: HPoint) -> HPoint:
    return HPoint(*(float(c) for c in mul_xyt(p.x, p.y, p.t, q.x, q.y, q.t)))


def inverse(p: HPoint) -> HPoint:
    return HPoint(-p.x, -p.y, -p.t)


def dilate(lam, p: HPoint) -> HPoint:
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    return HPoint(lam * p.x, lam * p.y, lam * lam * p.t)


def norm_xyt(x, y, t):
    r2 = x * x + y * y
    return sqrt(sqrt(r2 * r2 + t * t))


def koranyi_norm(p: HPoint) -> float:
    return float(norm_xyt(p.x, p.y, p.t))


def gauge_distance(p: HPoint, q: HPoint) -> float:
    """d(p, q) = |q^{-1} p|."""
    return koranyi_norm(group_mul(inverse(q), p))


# ---------------------------------------------------------------------------
# vector fields


def field_coefficients(name, x, y, t):
    """Coefficients a (in the basis d/dx, d/dy, d/dt) of a vector field and
    their Jacobian J[..., i, k] = d a_i / d x_k. Complex dtype throughout."""
    x, y, t = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in (x, y, t)))
    shape = x.shape
    a = np.zeros(shape + (3,), dtype=complex)
    J = np.zeros(shape + (3, 3), dtype=complex)
    if name == "X":
        a[..., 0] = 1.0
        a[..., 2] = 2.0 * y
        J[..., 2, 1] = 2.0
    elif name == "Y":
        a[..., 1] = 1.0
        a[..., 2] = -2.0 * x
        J[..., 2, 0] = -2.0
    elif name == "T":
        a[..., 2] = 1.0
    elif name == "Z":  # d/dz + i zbar d/dt = (X - iY)/2
        a[..., 0] = 0.5
        a[..., 1] = -0.5j
        a[..., 2] = y + 1j * x
        J[..., 2, 0] = 1j
        J[..., 2, 1] = 1.0
    elif name == "Zbar":
        a[..., 0] = 0.5
        a[..., 1] = 0.5j
        a[..., 2] = y - 1j * x
        J[..., 2, 0] = -1j
        J[..., 2, 1] = 1.0
    elif name == "Zr":  # d/dz - i zbar d/dt, right invariant
        a[..., 0] = 0.5
        a[..., 1] = -0.5j
        a[..., 2] = -y - 1j * x
        J[..., 2, 0] = -1j
        J[..., 2, 1] = -1.0
    elif name == "Xi":  # dilation generator
        a[..., 0] = x
        a[..., 1] = y
        a[..., 2] = 2.0 * t
        J[..., 0, 0] = 1.0
        J[..., 1, 1] = 1.0
        J[..., 2, 2] = 2.0
    else:
        raise ValueError(f"unknown field {name!r}; expected one of {FIELDS}")
    return a, J


def _coords(p):
    if isinstance(p, HPoint):
        return p.as_tuple()
    return tuple(p)


def _jet_of(f, p):
    x, y, t = _coords(p)
    out = f(*Jet.seed(x, y, t))
    if not isinstance(out, Jet):
        shape = np.broadcast(x, y, t).shape
        out = Jet.constant(np.broadcast_to(out, shape), 3)
    return (x, y, t), out


def _maybe_scalar(v):
    v = np.asarray(v)
    if v.ndim == 0:
        v = v.item()
        if isinstance(v, complex) and v.imag == 0.0:
            return v  # keep complex type for complex fields
    return v


def apply_field(field, f, p):
    """(field f)(p) for f a Jet-capable callable f(x, y, t)."""
    xyt, F = _jet_of(f, p)
    a, _ = field_coefficients(field, *xyt)
    out = np.einsum("...i,...i->...", a, F.grad)
    if field in ("X", "Y", "T", "Xi"):
        out = out.real
    return _maybe_scalar(out)


def apply_fields(first, second, f, p):
    """first(second f)(p): the second field acts first."""
    xyt, F = _jet_of(f, p)
    a1, _ = field_coefficients(first, *xyt)
    a2, J2 = field_coefficients(second, *xyt)
    # d_k (a2_i d_i f) = J2_ik d_i f + a2_i H_ik
    inner = np.einsum("...ik,...i->...k", J2, F.grad) + np.einsum("...i,...ik->...k", a2, F.hess)
    out = np.einsum("...k,...k->...", a1, inner)
    if first in ("X", "Y", "T", "Xi") and second in ("X", "Y", "T", "Xi"):
        out = out.real
    return _maybe_scalar(out)


def commutator(first, second, f, p):
    return apply_fields(first, second, f, p) - apply_fields(second, first, f, p)


def hsum_of_squares_jet(F, x, y):
    """(X^2 + Y^2) f from a Jet F in the variables (x, y, t)."""
    g, H = F.grad, F.hess
    x, y = value(x), value(y)
    return (H[..., 0, 0] + H[..., 1, 1] + 4.0 * y * H[..., 0, 2] - 4.0 * x * H[..., 1, 2]
            + 4.0 * (x * x + y * y) * H[..., 2, 2])


def horizontal_gradient_jet(F, x, y):
    """(Xf, Yf) from a Jet in (x, y, t)."""
    g = F.grad
    return g[..., 0] + 2.0 * y * g[..., 2], g[..., 1] - 2.0 * x * g[..., 2]


def sublaplacian_flat(f, p):
    """Delta_b f(p) = KAPPA (X^2 + Y^2) f(p)."""
    (x, y, _), F = _jet_of(f, p)
    return _maybe_scalar(KAPPA * hsum_of_squares_jet(F, x, y))


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureSpec:
    truncation_radius: float = 200.0
    rel_tol: float = 1e-8
    max_subdivisions: int = 4

    def __post_init__(self):
        if not self.truncation_radius > 0:
            raise ValueError("truncation_radius must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be at least 1")


def polar_to_xyt(r, phi, alpha):
    """Gauge-polar coordinates: |z|^2 = r^2 cos(phi), t = r^2 sin(phi).
    Lebesgue measure is r^3 dr dphi dalpha on [0,inf) x [-pi/2,pi/2] x [0,2pi)."""
    rho = r * np.sqrt(np.cos(phi))
    return rho * np.cos(alpha), rho * np.sin(alpha), r * r * np.sin(phi)


def _angular_rule(n_phi, n_alpha):
    u, w = np.polynomial.legendre.leggauss(n_phi)
    phi = 0.5 * np.pi * u
    wphi = 0.5 * np.pi * w
    alpha = 2.0 * np.pi * np.arange(n_alpha) / n_alpha
    walpha = np.full(n_alpha, 2.0 * np.pi / n_alpha)
    P, A = np.meshgrid(phi, alpha, indexing="ij")
    W = np.outer(wphi, walpha)
    return P.ravel(), A.ravel(), W.ravel()


def sphere_average(f, r, n_phi=64, n_alpha=64):
    """Integral of f over the gauge sphere of radius r in the (phi, alpha)
    measure, i.e. S(r) with  int f = int S(r) r^3 dr."""
    P, A, W = _angular_rule(n_phi, n_alpha)
    x, y, t = polar_to_xyt(r, P, A)
    return float(np.sum(W * f(x, y, t)))


def _radial_breaks(R, scale, extra):
    start = scale * 2.0 ** -8
    b = [0.0]
    r = start
    while r < R:
        b.append(r)
        r *= 2.0
    b.append(R)
    b.extend(e for e in extra if 0.0 < e < R)
    return np.unique(np.asarray(b))


def _integrate_level(f, breaks, n_r, n_phi, n_alpha):
    ur, wr = np.polynomial.legendre.leggauss(n_r)
    P, A, W = _angular_rule(n_phi, n_alpha)
    total = 0.0
    total_abs = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):  # fixed summation order
        r = 0.5 * (b - a) * ur + 0.5 * (b + a)
        wrad = 0.5 * (b - a) * wr * r ** 3
        x, y, t = polar_to_xyt(r[:, None], P[None, :], A[None, :])
        vals = np.asarray(f(x, y, t), dtype=float)
        w = wrad[:, None] * W[None, :]
        total += float(np.sum(w * vals))
        total_abs += float(np.sum(w * np.abs(vals)))
    return total, total_abs


def integrate(f, spec: QuadratureSpec = QuadratureSpec(), decay=None, scale=1.0, breakpoints=()):
    """Integral of f over the gauge ball of radius spec.truncation_radius.

    f is vectorized: f(x, y, t) on arrays. ``decay=k`` (k > 4) declares
    |f| ~ |x|^{-k} and adds the analytic tail beyond the truncation radius.
    ``scale`` is the length scale where f varies (shells are refined below it)
    and ``breakpoints`` lists radii where f is not smooth.
    """
    R = spec.truncation_radius
    breaks = _radial_breaks(R, scale, breakpoints)
    estimates = []
    n_r, n_phi, n_alpha = 8, 12, 8
    for level in range(spec.max_subdivisions + 1):
        est, mag = _integrate_level(f, breaks, n_r, n_phi, n_alpha)
        if decay is not None:
            if decay <= 4:
                raise ValueError("tail extrapolation needs decay exponent > 4")
            S = sphere_average(f, R, n_phi, n_alpha)
            est += S * R ** 4 / (decay - 4.0)
        estimates.append(est)
        if level > 0 and abs(estimates[-1] - estimates[-2]) <= spec.rel_tol * max(mag, 1e-300):
            return estimates[-1]
        n_r, n_phi, n_alpha = 2 * n_r, 2 * n_phi, 2 * n_alpha
    raise QuadratureError(
        f"quadrature did not reach rel_tol={spec.rel_tol} in {spec.max_subdivisions} refinements",
        estimates[-2:],
    )
