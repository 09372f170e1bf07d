"""Jerison-Lee bubbles on H^1, their scalings, cutoffs and superpositions."""

from dataclasses import dataclass, field

import numpy as np

from . import dual
from .dual import Jet, where
from .heisenberg import (
    KAPPA, ORIGIN, HPoint, QuadratureSpec, hsum_of_squares_jet, integrate, mul_xyt, norm_xyt,
)


def U_xyt(x, y, t):
    """U = (t^2 + (1 + |z|^2)^2)^{-1/2}; accepts arrays or Jets."""
    s = 1.0 + x * x + y * y
    return (t * t + s * s) ** -0.5


def eval_U(p: HPoint) -> float:
    return float(U_xyt(p.x, p.y, p.t))


def calibrate_kappa(candidates=(1.0, 0.5, 0.25, 0.125, 0.0625), n_points=50, seed=0):
    """Pick the constant k with -4 k (X^2 + Y^2) U = U^3.

    The ratio U^3 / (-4 (X^2+Y^2) U) is evaluated with exact second-order
    derivatives at random points; it must be constant and among the candidates.
    """
    rng = np.random.default_rng(seed)
    x, y, t = rng.uniform(-2.0, 2.0, (3, n_points))
    F = U_xyt(*Jet.seed(x, y, t))
    ratio = F.val ** 3 / (-4.0 * hsum_of_squares_jet(F, x, y))
    if np.ptp(ratio) > 1e-12 * np.abs(ratio).max():
        raise ValueError("bubble identity ratio is not constant; no normalization fits")
    k = float(np.mean(ratio))
    for c in candidates:
        if abs(k - c) <= 1e-12 * c:
            return c
    raise ValueError(f"calibrated ratio {k} is not among the candidates {candidates}")


def profile_scale(K, kappa=KAPPA):
    """s with L(U o delta_s) = K (U o delta_s)^3, i.e. s = sqrt(K / (16 kappa))."""
    return float(np.sqrt(K / (16.0 * kappa)))


def exact_amplitude(K, kappa=KAPPA):
    """a with L(aU) = K (aU)^3 on flat H^1."""
    return float(np.sqrt(16.0 * kappa / K))


def cutoff(s, inner, outer):
    """C^2 quintic step: 1 for s <= inner, 0 for s >= outer."""
    u = (s - inner) * (1.0 / (outer - inner))
    step = 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    inside = dual.value(s) <= inner
    outside = dual.value(s) >= outer
    return where(inside, 1.0, where(outside, 0.0, step))


@dataclass(frozen=True)
class Bubble:
    center: HPoint = ORIGIN
    lam: float = 1.0
    amplitude: float = 1.0
    cutoff_inner: float = 0.5
    cutoff_outer: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if not 0 < self.cutoff_inner < self.cutoff_outer:
            raise ValueError("need 0 < cutoff_inner < cutoff_outer")


def bubble_xyt(b: Bubble, x, y, t, with_cutoff=True):
    c = b.center
    u, v, s = mul_xyt(-c.x, -c.y, -c.t, x, y, t)  # p^{-1} x
    lam = b.lam
    val = b.amplitude * lam * U_xyt(lam * u, lam * v, lam * lam * s)
    if not with_cutoff:
        return val
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = cutoff(norm_xyt(u, v, s), b.cutoff_inner, b.cutoff_outer)
    return val * chi


def eval_bubble(b: Bubble, x: HPoint) -> float:
    return float(bubble_xyt(b, x.x, x.y, x.t))


def pde_residuals(b: Bubble, x, y, t):
    """Pointwise |-4 Delta_b phi - phi^3| for the uncut bubble (arrays)."""
    F = bubble_xyt(b, *Jet.seed(x, y, t), with_cutoff=False)
    lap = KAPPA * hsum_of_squares_jet(F, np.asarray(x, float), np.asarray(y, float))
    return np.abs(-4.0 * lap - F.val ** 3)


def pde_residual(b: Bubble, sample) -> float:
    """Max residual over HPoints, which must lie where the cutoff equals 1."""
    pts = np.array([p.as_tuple() for p in sample], dtype=float)
    c = b.center
    u, v, s = mul_xyt(-c.x, -c.y, -c.t, pts[:, 0], pts[:, 1], pts[:, 2])
    if np.any(norm_xyt(u, v, s) > b.cutoff_inner):
        raise ValueError("sample points must lie inside the cutoff plateau")
    return float(np.max(pde_residuals(b, pts[:, 0], pts[:, 1], pts[:, 2])))


def bubble_integrals(spec: QuadratureSpec = QuadratureSpec(rel_tol=1e-9)):
    """(int U^3, int U^4, int |z|^2 U^4) over H^1."""
    i3 = integrate(lambda x, y, t: U_xyt(x, y, t) ** 3, spec, decay=6)
    i4 = integrate(lambda x, y, t: U_xyt(x, y, t) ** 4, spec, decay=8)
    iw = integrate(lambda x, y, t: (x * x + y * y) * U_xyt(x, y, t) ** 4, spec, decay=6)
    return i3, i4, iw


def moment(alpha, lam, spec=None, inner=0.5, outer=1.0):
    """int |x|^alpha phi_lam^4 for the centered, cut-off bubble of unit amplitude."""
    b = Bubble(lam=lam, cutoff_inner=inner, cutoff_outer=outer)
    spec = spec or QuadratureSpec(truncation_radius=outer, rel_tol=1e-9)

    def f(x, y, t):
        return norm_xyt(x, y, t) ** alpha * bubble_xyt(b, x, y, t) ** 4

    return integrate(f, spec, scale=1.0 / lam, breakpoints=(inner,))


def moment_scaling(alpha, lambdas=(100.0, 1000.0, 10000.0), spec=None):
    """Least-squares slope of log int |x|^alpha phi_lam^4 against log lam."""
    if not 0 <= alpha < 4:
        raise ValueError("alpha must lie in [0, 4)")
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.max() / lambdas.min() < 100.0 * (1 - 1e-12):
        raise ValueError("lambdas must span at least two decades")
    vals = np.array([moment(alpha, lam, spec) for lam in lambdas])
    slope, _ = np.polyfit(np.log(lambdas), np.log(vals), 1)
    return float(slope)


@dataclass(frozen=True)
class Superposition:
    bubbles: tuple = ()
    labels: tuple = field(default=())

    def __post_init__(self):
        centers = [b.center for b in self.bubbles]
        if len(set(centers)) != len(centers):
            raise ValueError("bubble centers must be pairwise distinct")
        if self.labels and len(self.labels) != len(self.bubbles):
            raise ValueError("labels must match bubbles")


def superposition_xyt(s: Superposition, x, y, t):
    out = 0.0 * x
    for b in s.bubbles:
        out = out + bubble_xyt(b, x, y, t)
    return out


def eval_superposition(s: Superposition, x: HPoint) -> float:
    return float(sum(eval_bubble(b, x) for b in s.bubbles))
