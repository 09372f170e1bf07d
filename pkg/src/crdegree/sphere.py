"""The standard CR sphere S^3 in C^2 as a backend.

Ambient real coordinates: z1 = x1 + i x2, z2 = x3 + i x4. For a pole p the
chart C_p = C o U_p first rotates p to (0, 1) by an SU(2) matrix and then
applies the Cayley transform

    C(xi) = (xi1 / (1 + xi2),  Re(i (1 - xi2) / (1 + xi2))),

a CR diffeomorphism of S^3 minus {-p} onto H^1 sending p to the origin. The
contact form theta_S of the sphere is the one whose push-forward under any C_p
equals U^2 theta_H with U the flat bubble (U(0) = 1), so theta_S agrees with
theta_H at the chart center. Conformal covariance of L = -4 Delta_b + R then
gives every sphere operator from the flat one.

Green functions: G_S is the Green function of L on (S^3, theta_S) with respect
to the volume U^4 dx dy dt. In CR normal coordinates at p (contact form
theta_p = U^{-2} theta_S near p) the Green function reads c/|x|^2 + A_p + w.
"""

from dataclasses import dataclass
from functools import lru_cache
import itertools

import numpy as np

from . import dual
from .bubble import U_xyt
from .dual import Jet
from .errors import ChartError
from .heisenberg import (
    KAPPA, HPoint, horizontal_gradient_jet, hsum_of_squares_jet, norm_xyt, polar_to_xyt,
)

DEGREE_CAP = 6


@dataclass(frozen=True)
class SpherePoint:
    z1: complex
    z2: complex

    def __post_init__(self):
        z1, z2 = complex(self.z1), complex(self.z2)
        n = np.sqrt(abs(z1) ** 2 + abs(z2) ** 2)
        if n == 0:
            raise ValueError("zero vector is not on the sphere")
        object.__setattr__(self, "z1", z1 / n)
        object.__setattr__(self, "z2", z2 / n)

    @classmethod
    def from_real(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(complex(v[0], v[1]), complex(v[2], v[3]))

    def real(self):
        return np.array([self.z1.real, self.z1.imag, self.z2.real, self.z2.imag])

    def antipode(self):
        return SpherePoint(-self.z1, -self.z2)


NORTH = SpherePoint(0.0, 1j)  # x4 = 1
SOUTH = SpherePoint(0.0, -1j)


def random_points(n, rng):
    v = rng.standard_normal((n, 4))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _rotation(p: SpherePoint):
    """SU(2) matrix sending p to (0, 1)."""
    return np.array([[p.z2, -p.z1], [np.conj(p.z1), np.conj(p.z2)]])


def _complex_of(q):
    if isinstance(q, SpherePoint):
        return np.array([q.z1, q.z2])
    q = np.asarray(q, dtype=float)
    return np.stack([q[..., 0] + 1j * q[..., 1], q[..., 2] + 1j * q[..., 3]], axis=-1)


def chart_xyt(pole: SpherePoint, q):
    """Chart coordinates of ambient points q (array (..., 4) or SpherePoint)."""
    xi = _complex_of(q) @ _rotation(pole).T
    d = 1.0 + xi[..., 1]
    if np.any(np.abs(d) < 1e-14):
        raise ChartError("point at the cut locus (antipode of the pole)")
    z = xi[..., 0] / d
    t = (1j * (1.0 - xi[..., 1]) / d).real
    return z.real, z.imag, t


def chart_to_heisenberg(pole: SpherePoint, q: SpherePoint) -> HPoint:
    x, y, t = chart_xyt(pole, q)
    return HPoint(float(x), float(y), float(t))


def inverse_chart_xyt(pole: SpherePoint, x, y, t):
    """Ambient real coordinates (x1, x2, x3, x4) of C_pole^{-1}(x, y, t).

    Written in real arithmetic so it accepts Jets."""
    r2 = x * x + y * y
    s = 1.0 + r2
    D = s * s + t * t
    xi2r = (1.0 - r2 * r2 - t * t) / D
    xi2i = 2.0 * t / D
    xi1r = 2.0 * (x * s - y * t) / D
    xi1i = 2.0 * (y * s + x * t) / D
    # q = U_p^H xi with U_p^H = [[conj(p2), p1], [-conj(p1), p2]]
    p1, p2 = pole.z1, pole.z2
    a, b = np.conj(p2), p1
    c, d = -np.conj(p1), p2
    q1r = a.real * xi1r - a.imag * xi1i + b.real * xi2r - b.imag * xi2i
    q1i = a.real * xi1i + a.imag * xi1r + b.real * xi2i + b.imag * xi2r
    q2r = c.real * xi1r - c.imag * xi1i + d.real * xi2r - d.imag * xi2i
    q2i = c.real * xi1i + c.imag * xi1r + d.real * xi2i + d.imag * xi2r
    return q1r, q1i, q2r, q2i


def chart_from_heisenberg(pole: SpherePoint, p: HPoint) -> SpherePoint:
    return SpherePoint.from_real([float(v) for v in inverse_chart_xyt(pole, p.x, p.y, p.t)])


# ---------------------------------------------------------------------------
# polynomial functions on S^3


class ManifoldFn:
    """Polynomial in the ambient coordinates, restricted to S^3.

    ``coefficients`` maps exponent tuples (i, j, k, l) to reals.
    """

    def __init__(self, coefficients, cap=DEGREE_CAP):
        coeffs = {}
        for e, c in dict(coefficients).items():
            e = tuple(int(v) for v in e)
            if len(e) != 4 or min(e) < 0:
                raise ValueError(f"bad exponent {e}")
            if sum(e) > cap:
                raise ValueError(f"monomial {e} exceeds the degree cap {cap}")
            if c != 0:
                coeffs[e] = coeffs.get(e, 0.0) + float(c)
        self.coefficients = {e: c for e, c in sorted(coeffs.items()) if c != 0.0}
        self.cap = cap
        self._grad = None
        self._hess = None

    @property
    def degree(self):
        return max((sum(e) for e in self.coefficients), default=0)

    def __repr__(self):
        return f"ManifoldFn({self.coefficients})"

    def __call__(self, x1, x2, x3, x4):
        xs = (x1, x2, x3, x4)
        out = 0.0
        cache = {}
        for e, c in self.coefficients.items():
            term = c
            for i, k in enumerate(e):
                if k:
                    if (i, k) not in cache:
                        cache[(i, k)] = xs[i] ** k
                    term = term * cache[(i, k)]
            out = out + term
        if not isinstance(out, Jet):
            out = out + 0.0 * np.asarray(x1, dtype=float)
        return out

    def evaluate(self, q):
        """Values at points q of shape (..., 4) or a SpherePoint."""
        v = q.real() if isinstance(q, SpherePoint) else np.asarray(q, dtype=float)
        return self(v[..., 0], v[..., 1], v[..., 2], v[..., 3])

    def _derivative_tables(self):
        if self._grad is None:
            grad = []
            for i in range(4):
                grad.append(_diff(self.coefficients, i))
            hess = [[_diff(grad[i], j) for j in range(4)] for i in range(4)]
            self._grad, self._hess = grad, hess
        return self._grad, self._hess

    def gradient(self, q):
        """Ambient (Euclidean) gradient, shape (..., 4)."""
        v = np.asarray(q, dtype=float)
        grad, _ = self._derivative_tables()
        return np.stack([_eval_dict(g, v) for g in grad], axis=-1)

    def hessian(self, q):
        v = np.asarray(q, dtype=float)
        _, hess = self._derivative_tables()
        return np.stack([np.stack([_eval_dict(h, v) for h in row], axis=-1) for row in hess], axis=-2)

    def scaled(self, c):
        return ManifoldFn({e: c * v for e, v in self.coefficients.items()}, self.cap)

    def compose_linear(self, R):
        """The function x -> K(R x) as a new polynomial."""
        R = np.asarray(R, dtype=float)
        lin = [{_unit(j): R[i, j] for j in range(4) if R[i, j] != 0.0} for i in range(4)]
        out = {}
        for e, c in self.coefficients.items():
            term = {(0, 0, 0, 0): c}
            for i, k in enumerate(e):
                for _ in range(k):
                    term = _polymul(term, lin[i])
            for m, v in term.items():
                out[m] = out.get(m, 0.0) + v
        return ManifoldFn({m: v for m, v in out.items() if abs(v) > 1e-15}, self.cap)


def _unit(j):
    e = [0, 0, 0, 0]
    e[j] = 1
    return tuple(e)


def _polymul(a, b):
    out = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            m = tuple(x + y for x, y in zip(ea, eb))
            out[m] = out.get(m, 0.0) + ca * cb
    return out


def _diff(coeffs, i):
    out = {}
    for e, c in coeffs.items():
        if e[i]:
            m = list(e)
            m[i] -= 1
            out[tuple(m)] = out.get(tuple(m), 0.0) + c * e[i]
    return out


def _eval_dict(coeffs, v):
    out = np.zeros(v.shape[:-1])
    for e, c in coeffs.items():
        out = out + c * np.prod(v ** np.asarray(e, dtype=float), axis=-1)
    return out


def unitary_as_real(W):
    """4x4 real matrix of a 2x2 complex matrix acting on (x1, x2, x3, x4)."""
    W = np.asarray(W, dtype=complex)
    R = np.zeros((4, 4))
    for i, j in itertools.product(range(2), range(2)):
        a, b = W[i, j].real, W[i, j].imag
        R[2 * i:2 * i + 2, 2 * j:2 * j + 2] = [[a, -b], [b, a]]
    return R


def random_unitary(rng):
    A = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    Q, Rr = np.linalg.qr(A)
    return Q * (np.diag(Rr) / np.abs(np.diag(Rr)))


# ---------------------------------------------------------------------------
# operators via charts


def _pullback_jet(f, pole, x0):
    """Jet of f o C_pole^{-1} at chart points x0 = (x, y, t)."""
    X = Jet.seed(*x0)
    out = f(*inverse_chart_xyt(pole, *X))
    if not isinstance(out, Jet):
        out = Jet.constant(np.broadcast_to(out, np.broadcast(*x0).shape), 3)
    return out


def _chart_point(q, pole):
    if pole is None:
        pole = q if isinstance(q, SpherePoint) else SpherePoint.from_real(q)
    return pole, chart_xyt(pole, q)


def sublaplacian_sphere(f, q, pole=None):
    """Delta_b f at q for (S^3, theta_S), computed in the chart centered at
    ``pole`` (default: q itself).

    With theta_S = U^2 theta_H in the chart,
        Delta_S f = U^{-2} Delta_H F + 2 KAPPA U^{-3} <grad_H U, grad_H F>.
    ``f`` is a ManifoldFn or any Jet-capable callable of (x1, x2, x3, x4).
    """
    pole, (x, y, t) = _chart_point(q, pole)
    F = _pullback_jet(f, pole, (x, y, t))
    Uj = U_xyt(*Jet.seed(x, y, t))
    XF, YF = horizontal_gradient_jet(F, x, y)
    XU, YU = horizontal_gradient_jet(Uj, x, y)
    u = Uj.val
    out = KAPPA * hsum_of_squares_jet(F, x, y) / u ** 2 + 2.0 * KAPPA * (XU * XF + YU * YF) / u ** 3
    return float(out) if np.ndim(out) == 0 else out


def conformal_sublaplacian_sphere(f, q, pole=None):
    """L_S f = U^{-3} L_H (U F) in the chart (flat L_H = -4 KAPPA (X^2+Y^2))."""
    pole, (x, y, t) = _chart_point(q, pole)
    X = Jet.seed(x, y, t)
    F = f(*inverse_chart_xyt(pole, *X))
    if not isinstance(F, Jet):
        F = Jet.constant(np.broadcast_to(F, np.broadcast(x, y, t).shape), 3)
    UF = U_xyt(*X) * F
    out = -4.0 * KAPPA * hsum_of_squares_jet(UF, x, y) / U_xyt(x, y, t) ** 3
    return float(out) if np.ndim(out) == 0 else out


def webster_curvature(q, pole=None):
    """R = L_S 1, evaluated through a chart."""
    return conformal_sublaplacian_sphere(lambda *a: 1.0, q, pole)


def great_circle_sublaplacian(f, q, h=1e-3):
    """Finite-difference oracle: second differences of f along the two
    horizontal great circles through q, scaled to match Delta_b.

    The horizontal frame at q is J q and iJ q with J(z1, z2) = (conj z2,
    -conj z1); its chart image at the center is (X/2, Y/2), so
    Delta_b = 4 KAPPA (e1^2 + e2^2)."""
    q = np.asarray(q, dtype=float)
    z = _complex_of(q)
    Jq = np.stack([np.conj(z[..., 1]), -np.conj(z[..., 0])], axis=-1)
    total = 0.0
    f0 = f(*np.moveaxis(q, -1, 0))
    for e in (Jq, 1j * Jq):
        er = np.stack([e[..., 0].real, e[..., 0].imag, e[..., 1].real, e[..., 1].imag], axis=-1)
        plus = np.cos(h) * q + np.sin(h) * er
        minus = np.cos(h) * q - np.sin(h) * er
        total = total + (f(*np.moveaxis(plus, -1, 0)) + f(*np.moveaxis(minus, -1, 0)) - 2.0 * f0) / h ** 2
    return 4.0 * KAPPA * total


# ---------------------------------------------------------------------------
# Green function


def flux_through_sphere(G, r, n_phi=64, n_alpha=64):
    """-4 KAPPA times the flux of grad_b G through the gauge sphere of radius r
    (Euclidean divergence theorem; X and Y are divergence free)."""
    from .heisenberg import _angular_rule

    P, A, W = _angular_rule(n_phi, n_alpha)
    x, y, t = polar_to_xyt(r, P, A)
    X = Jet.seed(x, y, t)
    Gj = G(*X)
    Nj = norm_xyt(*X)
    XG, YG = horizontal_gradient_jet(Gj, x, y)
    XN, YN = horizontal_gradient_jet(Nj, x, y)
    return float(-4.0 * KAPPA * np.sum(W * (XG * XN + YG * YN)) * r ** 3)


@lru_cache(maxsize=None)
def green_constant():
    """c such that c/|x|^2 is the fundamental solution of -4 Delta_b, fixed by
    unit flux through a gauge sphere."""
    return 1.0 / flux_through_sphere(lambda x, y, t: norm_xyt(x, y, t) ** -2, 1.0)


def green_ambient(p: SpherePoint, q1r, q1i, q2r, q2i):
    """Closed form G_S(p, q) = 2c / |1 - <q, p>| (Jet-capable in q)."""
    c = green_constant()
    a, b = np.conj(p.z1), np.conj(p.z2)
    # <q, p> = q1 conj(p1) + q2 conj(p2)
    re = q1r * a.real - q1i * a.imag + q2r * b.real - q2i * b.imag
    im = q1r * a.imag + q1i * a.real + q2r * b.imag + q2i * b.real
    m = (1.0 - re) * (1.0 - re) + im * im
    return 2.0 * c * m ** -0.5


def green_function(p: SpherePoint, q: SpherePoint) -> float:
    """G_S(p, q) through the chart centered at p: c / (rho^2 U(x)), x = C_p(q)."""
    if np.allclose(p.real(), q.real(), atol=1e-14, rtol=0):
        raise ValueError("Green function is singular at p = q")
    if np.allclose(p.real(), -q.real(), atol=1e-12, rtol=0):
        return float(green_ambient(p, *q.real()))  # chart cut point; use the closed form
    x, y, t = chart_xyt(p, q)
    rho2 = norm_xyt(x, y, t) ** 2
    return float(green_constant() / (rho2 * U_xyt(x, y, t)))


def normal_green_xyt(p: SpherePoint, x, y, t):
    """Green function of theta_p in the chart at p, via the ambient closed form:
    U(x) G_S(p, C_p^{-1} x)."""
    return U_xyt(x, y, t) * green_ambient(p, *inverse_chart_xyt(p, x, y, t))


@dataclass(frozen=True)
class GreenExpansion:
    base: SpherePoint
    leading_coeff: float
    constant_term: float
    remainder_bound: float


def mass_constant(p: SpherePoint, radii=(0.1, 0.05, 0.025), n_angles=16, tol=1e-6):
    """Fit G = a/|x|^2 + A + b|x| in normal coordinates on gauge spheres of the
    given radii; A is the extrapolated constant term."""
    from .heisenberg import _angular_rule

    P, Aa, _ = _angular_rule(n_angles, n_angles)
    rows, vals = [], []
    for r in radii:
        x, y, t = polar_to_xyt(r, P, Aa)
        g = normal_green_xyt(p, x, y, t)
        rows.append(np.column_stack([np.full_like(g, r ** -2), np.ones_like(g), np.full_like(g, r)]))
        vals.append(g)
    A = np.vstack(rows)
    g = np.concatenate(vals)
    coef, *_ = np.linalg.lstsq(A, g, rcond=None)
    resid = g - A @ coef
    if np.max(np.abs(resid)) > tol * np.max(np.abs(g)):
        raise ValueError("Green expansion fit failed; chart and Green function are inconsistent")
    w = g - A[:, 0] * coef[0] - coef[1]
    return GreenExpansion(p, float(coef[0]), float(coef[1]), float(np.max(np.abs(w))))


# ---------------------------------------------------------------------------
# smoothed bubbles


def smoothed_bubble(b, x: SpherePoint, pole: SpherePoint = NORTH, spec=None):
    """phi~ = int G phi^3 for the bubble ``b`` placed in the normal chart at
    ``pole``.

    In normal coordinates the Green kernel is the flat one, c/|w^{-1} y|^2, and
    the uncut bubble satisfies Gamma * (a U_lam)^3 = a^3 U_lam exactly. Hence
        phi~(y) = a^3 (U_lam(y) - Gamma * ((1 - chi^3) U_lam^3)(y)),
    and only the smooth, decaying remainder needs quadrature.
    """
    from .bubble import bubble_xyt, cutoff
    from .heisenberg import QuadratureSpec, integrate, mul_xyt

    y = chart_to_heisenberg(pole, x)
    c = green_constant()
    a = b.amplitude
    unit = type(b)(center=b.center, lam=b.lam, amplitude=1.0,
                   cutoff_inner=b.cutoff_inner, cutoff_outer=b.cutoff_outer)

    def remainder(wx, wy, wt):
        ux, uy, ut = mul_xyt(y.x, y.y, y.t, wx, wy, wt)  # y . w
        cx, cy, ct = b.center.x, b.center.y, b.center.t
        vx, vy, vt = mul_xyt(-cx, -cy, -ct, ux, uy, ut)
        chi = cutoff(norm_xyt(vx, vy, vt), b.cutoff_inner, b.cutoff_outer)
        Ul = bubble_xyt(unit, ux, uy, ut, with_cutoff=False)
        with np.errstate(divide="ignore"):
            k = c / norm_xyt(wx, wy, wt) ** 2
        return k * (1.0 - chi ** 3) * Ul ** 3

    spec = spec or QuadratureSpec(truncation_radius=200.0, rel_tol=1e-7, max_subdivisions=4)
    corr = integrate(remainder, spec, decay=8)
    peak = float(bubble_xyt(unit, y.x, y.y, y.t, with_cutoff=False))
    return a ** 3 * (peak - corr)
