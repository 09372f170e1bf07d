"""Finite-dimensional reduction: parameter boxes, the reduced energy in the
concentration parameters, its Newton solver and the amplitude estimate."""

from dataclasses import dataclass

import numpy as np

from .errors import SolverError
from .interaction import InteractionMatrix, least_eigenpair

U4_INTEGRAL = np.pi ** 2 / 4.0
TAU0 = 0.5


@dataclass(frozen=True)
class ReducedProblem:
    matrix: InteractionMatrix
    k_values: np.ndarray
    tau: float
    box_A: float = 10.0
    box_eps: float = 0.1

    def __post_init__(self):
        k = np.asarray(self.k_values, dtype=float)
        object.__setattr__(self, "k_values", k)
        if k.shape != (len(self.matrix.entries),) or np.any(k <= 0):
            raise ValueError("need one positive K value per point")
        if not 0 < self.tau <= TAU0:
            raise ValueError(f"tau must lie in (0, {TAU0}]")
        if self.box_A <= 1 or self.box_eps <= 0:
            raise ValueError("need box_A > 1 and box_eps > 0")
        if not self.matrix.least_eig > 0:
            raise ValueError("reduced problems need mu(M) > 0")

    @classmethod
    def from_entries(cls, M, k_values, tau, **kw):
        M = np.asarray(M, dtype=float)
        mu, v = least_eigenpair(M)
        return cls(InteractionMatrix((), M, mu, v), k_values, tau, **kw)

    @classmethod
    def from_subset(cls, matrix: InteractionMatrix, tau, **kw):
        return cls(matrix, [c.k_value for c in matrix.subset], tau, **kw)

    @property
    def coefficients(self):
        """c_k with F = 1/2 s^T M s - sum c_k log s_k, s = 1/lambda."""
        return U4_INTEGRAL * self.tau / self.k_values

    def box(self):
        """Bounds of the lambda box (A^{-1} tau^{-1/2}, A tau^{-1/2})."""
        r = self.tau ** -0.5
        return r / self.box_A, r * self.box_A


@dataclass(frozen=True)
class ReducedSolution:
    lambdas: np.ndarray
    amplitudes: np.ndarray
    hessian_min_eig: float
    scaled_lambdas: np.ndarray
    in_box: bool
    newton_steps: int


@dataclass(frozen=True)
class AmplitudeEstimate:
    values: np.ndarray
    band: float
    tau: float


def energy_terms(lam, M, k_values, tau):
    lam = np.asarray(lam, dtype=float)
    s = 1.0 / lam
    return 0.5 * s @ M @ s + np.sum(U4_INTEGRAL * tau / np.asarray(k_values) * np.log(lam))


def gradient_terms(lam, M, k_values, tau):
    lam = np.asarray(lam, dtype=float)
    return -(M @ (1.0 / lam)) / lam ** 2 + U4_INTEGRAL * tau / (np.asarray(k_values) * lam)


def reduced_energy(lam, prob: ReducedProblem) -> float:
    if np.any(np.asarray(lam) <= 0):
        raise ValueError("lambda must be positive")
    return float(energy_terms(lam, prob.matrix.entries, prob.k_values, prob.tau))


def reduced_gradient(lam, prob: ReducedProblem):
    if np.any(np.asarray(lam) <= 0):
        raise ValueError("lambda must be positive")
    return gradient_terms(lam, prob.matrix.entries, prob.k_values, prob.tau)


def reduced_hessian(lam, prob: ReducedProblem):
    """Hessian of F in the lambda coordinates."""
    lam = np.asarray(lam, dtype=float)
    M = prob.matrix.entries
    c = prob.coefficients
    s = 1.0 / lam
    g_s = M @ s - c / s
    H_s = M + np.diag(c / s ** 2)
    D = np.diag(-1.0 / lam ** 2)
    return D @ H_s @ D + np.diag(g_s * 2.0 / lam ** 3)


def solve_reduced(prob: ReducedProblem, start=None, tol=1e-13, max_iter=200) -> ReducedSolution:
    """Damped Newton in s = 1/lambda where F is convex; from lambda = tau^{-1/2}
    unless a start is given."""
    M = prob.matrix.entries
    c = prob.coefficients
    n = len(c)
    s = np.full(n, prob.tau ** 0.5) if start is None else 1.0 / np.asarray(start, dtype=float)

    def F(v):
        return 0.5 * v @ M @ v - np.sum(c * np.log(v))

    trace = []
    for it in range(max_iter):
        g = M @ s - c / s
        H = M + np.diag(c / s ** 2)
        step = np.linalg.solve(H, g)
        dec = float(g @ step)
        trace.append(dec)
        # the decrement is measured against the size of the log barrier
        if dec <= tol ** 2 * float(np.sum(c)) or np.max(np.abs(step) / s) < tol:
            s = s - step
            break
        t = 1.0
        # near the minimizer the Armijo test drowns in the rounding of F, so
        # full steps are taken once the decrement is small
        near = dec <= 1e-8 * float(np.sum(c))
        while np.any(s - t * step <= 0) or (not near and F(s - t * step) > F(s) - 0.25 * t * dec):
            t *= 0.5
            if t < 1e-14:
                raise SolverError("line search failed in the reduced Newton solve", trace=trace)
        s = s - t * step
    else:
        raise SolverError("reduced Newton did not converge", trace=trace)
    lam = 1.0 / s
    hmin = float(np.linalg.eigvalsh(reduced_hessian(lam, prob))[0])
    lo, hi = prob.box()
    return ReducedSolution(
        lambdas=lam,
        amplitudes=amplitude_estimate(prob).values,
        hessian_min_eig=hmin,
        scaled_lambdas=lam * prob.tau ** 0.5,
        in_box=bool(np.all((lam > lo) & (lam < hi))),
        newton_steps=it,
    )


def box_starts(prob: ReducedProblem, n, rng):
    """Random starting lambdas, log-uniform in the parameter box."""
    lo, hi = prob.box()
    return np.exp(rng.uniform(np.log(lo), np.log(hi), (n, len(prob.k_values))))


def tau_drift(prob: ReducedProblem, taus):
    """Scaled solutions lambda* tau^{1/2} along a tau sequence and the largest
    relative change between consecutive ones."""
    scaled = []
    for tau in taus:
        q = ReducedProblem(prob.matrix, prob.k_values, tau, prob.box_A, prob.box_eps)
        scaled.append(solve_reduced(q).scaled_lambdas)
    scaled = np.array(scaled)
    drift = np.max(np.abs(np.diff(scaled, axis=0)) / np.abs(scaled[1:])) if len(taus) > 1 else 0.0
    return scaled, float(drift)


def amplitude_band(tau, C=1.0):
    return C * tau ** 0.5 * abs(np.log(tau))


def amplitude_estimate(prob: ReducedProblem, C=1.0) -> AmplitudeEstimate:
    """Leading-order amplitudes 2 / K^{1/2} with the error band C tau^{1/2} |log tau|."""
    return AmplitudeEstimate(2.0 / np.sqrt(prob.k_values), amplitude_band(prob.tau, C), prob.tau)


def functional_value(u, tau, K) -> float:
    """J(u) = 1/2 int u L u - 1/(4 - tau) int K |u|^{4 - tau} on the solver grid,
    with the discrete L and zero data outside the interior."""
    from .fd_solver import conformal_operator

    grid = u.grid
    L_II, _, I, _ = conformal_operator(grid)
    v = u.values.ravel()[I]
    k = np.asarray(K(*grid.mesh()), dtype=float).ravel()[I] if callable(K) else np.broadcast_to(float(K), v.shape)
    q = 4.0 - tau
    w = grid.cell_volume
    return float(0.5 * w * (v @ (L_II @ v)) - w * np.sum(k * np.abs(v) ** q) / q)
