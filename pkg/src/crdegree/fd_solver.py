"""Finite-difference solver for L u = K u^p on a Heisenberg box, the discrete
spectral check of the linearized operator and blow-up diagnostics."""

from dataclasses import dataclass, field
import struct

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .bubble import U_xyt, profile_scale
from .errors import FormatError, NoBlowupError, SolverError
from .heisenberg import KAPPA, mul_xyt, norm_xyt
from .sphere import green_constant

DEFAULT_SCHEDULE = (2.0, 2.5, 2.8, 2.9, 2.95, 2.975, 2.9875)
DIRECT_LIMIT = 64 ** 3
MIN_PROFILE_RADIUS = 0.5  # floor for 0.3 log M when M stays moderate
SNAPSHOT_MAGIC = b"HFLD"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<I3i3dd")


@dataclass(frozen=True)
class Grid:
    """Nodes x_i = -X + i hx (i = 0..nx-1), likewise y and t; box = (X, Y, T)."""
    box: tuple
    nx: int
    ny: int
    nt: int

    def __post_init__(self):
        box = tuple(float(b) for b in self.box)
        if len(box) != 3 or min(box) <= 0:
            raise ValueError("box needs three positive half extents")
        if min(self.nx, self.ny, self.nt) < 3:
            raise ValueError("need at least 3 nodes per axis")
        object.__setattr__(self, "box", box)

    @property
    def shape(self):
        return (self.nx, self.ny, self.nt)

    @property
    def spacing(self):
        X, Y, T = self.box
        return (2 * X / (self.nx - 1), 2 * Y / (self.ny - 1), 2 * T / (self.nt - 1))

    @property
    def hx(self):
        return self.spacing[0]

    @property
    def hy(self):
        return self.spacing[1]

    @property
    def ht(self):
        return self.spacing[2]

    @property
    def cell_volume(self):
        hx, hy, ht = self.spacing
        return hx * hy * ht

    def axes(self):
        X, Y, T = self.box
        return (np.linspace(-X, X, self.nx), np.linspace(-Y, Y, self.ny), np.linspace(-T, T, self.nt))

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def interior(self):
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1, 1:-1] = True
        return m

    def refine(self):
        """Halve hx, hy and quarter ht, keeping ht / hx^2 fixed."""
        return Grid(self.box, 2 * self.nx - 1, 2 * self.ny - 1, 4 * self.nt - 3)


@dataclass
class Field:
    grid: Grid
    values: np.ndarray
    exact: object = None  # optional callable (x, y, t) -> values, used for sampling
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def from_function(cls, grid, f, keep_exact=False):
        vals = f(*grid.mesh())
        return cls(grid, vals, exact=f if keep_exact else None)

    def sample(self, x, y, t):
        """Values at arbitrary points inside the box (cubic interpolation
        unless an exact evaluator is attached)."""
        if self.exact is not None:
            return self.exact(x, y, t)
        interp = self.info.get("_interp")
        if interp is None:
            interp = RegularGridInterpolator(self.grid.axes(), self.values, method="cubic")
            self.info["_interp"] = interp
        return interp(np.stack([x, y, t], axis=-1))

    def integral(self, g=None):
        v = self.values if g is None else self.values * g
        return float(np.sum(v[1:-1, 1:-1, 1:-1]) * self.grid.cell_volume)


@dataclass(frozen=True)
class SolverConfig:
    p: float = 2.0
    newton_tol: float = 1e-10
    max_newton: int = 40
    continuation_schedule: tuple = DEFAULT_SCHEDULE
    damping: float = 1.0

    def __post_init__(self):
        if not 1.0 <= self.p < 3.0:
            raise ValueError("p must lie in [1, 3)")
        if any(not 1.0 <= q < 3.0 for q in self.continuation_schedule):
            raise ValueError("schedule values must lie in [1, 3)")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.newton_tol <= 0 or self.max_newton < 1:
            raise ValueError("invalid Newton parameters")


@dataclass(frozen=True)
class BlowupDiagnostics:
    peaks: list
    tau: list
    tau_M_sq: list
    profile_errors: list
    green_coeffs: list
    growth_exponent: float


def _index(grid):
    return np.arange(grid.nx * grid.ny * grid.nt).reshape(grid.shape)


def discretize_sublaplacian(grid: Grid):
    """Sparse (X^2 + Y^2)_h times kappa on all nodes; rows of boundary nodes
    are zero. Central differences for every term, including the mixed ones."""
    hx, hy, ht = grid.spacing
    x, y, _ = grid.mesh()
    idx = _index(grid)
    inner = (slice(1, -1),) * 3
    rows, cols, vals = [], [], []

    def put(di, dj, dk, coef):
        sl = tuple(slice(1 + d, s - 1 + d) for d, s in zip((di, dj, dk), grid.shape))
        c = np.broadcast_to(coef, x[inner].shape)
        rows.append(idx[inner].ravel())
        cols.append(idx[sl].ravel())
        vals.append(c.ravel())

    r2 = x[inner] ** 2 + y[inner] ** 2
    put(0, 0, 0, -2 / hx ** 2 - 2 / hy ** 2 - 8 * r2 / ht ** 2)
    for s in (-1, 1):
        put(s, 0, 0, 1 / hx ** 2)
        put(0, s, 0, 1 / hy ** 2)
        put(0, 0, s, 4 * r2 / ht ** 2)
        for q in (-1, 1):
            put(s, 0, q, 4 * y[inner] * s * q / (4 * hx * ht))
            put(0, s, q, -4 * x[inner] * s * q / (4 * hy * ht))
    n = idx.size
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return KAPPA * A


def conformal_operator(grid: Grid):
    """(L_II, L_IB, interior index, boundary index) for L = -4 Delta_h."""
    A = -4.0 * discretize_sublaplacian(grid)
    mask = grid.interior().ravel()
    I = np.flatnonzero(mask)
    B = np.flatnonzero(~mask)
    A = A.tocsr()
    return A[I][:, I].tocsc(), A[I][:, B].tocsc(), I, B


def factor(A):
    """Sparse LU tuned for matrices with symmetric structure."""
    return spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))


def _solve(A, b):
    if A.shape[0] <= DIRECT_LIMIT:
        return factor(A).solve(b)
    d = A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda v: v / d)
    x, info = spla.gmres(A, b, M=M, rtol=1e-12, restart=100, maxiter=200)
    if info != 0:
        raise SolverError("iterative linear solve did not converge", trace=[info])
    return x


def _k_values(K, grid, I):
    if callable(K):
        k = np.asarray(K(*grid.mesh()), dtype=float).ravel()[I]
    else:
        k = np.broadcast_to(np.asarray(K, dtype=float), grid.shape).ravel()[I]
    if np.any(k <= 0):
        raise ValueError("K must be positive on the box")
    return k


def solve_subcritical(K, cfg: SolverConfig, grid: Grid, boundary: Field, initial: Field = None):
    """Damped Newton for -4 Delta_h u = K u^p with Dirichlet data taken from
    ``boundary`` on the faces of the box."""
    L_II, L_IB, I, B = conformal_operator(grid)
    g = boundary.values.ravel()[B]
    if np.any(g < 0):
        raise ValueError("boundary data must be nonnegative")
    k = _k_values(K, grid, I)
    p = cfg.p
    rhs_b = L_IB @ g
    u = (initial if initial is not None else boundary).values.ravel()[I].copy()
    if np.any(u <= 0):
        raise ValueError("initial guess must be positive in the interior")

    def residual(v):
        return L_II @ v + rhs_b - k * v ** p

    F = residual(u)
    trace = [float(np.linalg.norm(F))]
    for _ in range(cfg.max_newton):
        if trace[-1] <= cfg.newton_tol * np.linalg.norm(k * u ** p):
            break
        J = L_II - sp.diags(p * k * u ** (p - 1))
        du = -_solve(J, F)
        alpha = cfg.damping
        for _ in range(40):
            v = u + alpha * du
            if np.all(v > 0):
                Fv = residual(v)
                if np.linalg.norm(Fv) < (1 - 1e-4 * alpha) * trace[-1] or alpha == cfg.damping and trace[-1] < 1e-6:
                    break
            alpha *= 0.5
        else:
            raise SolverError("positivity or descent could not be restored by damping", trace=trace)
        u, F = v, Fv
        trace.append(float(np.linalg.norm(F)))
    else:
        if trace[-1] > cfg.newton_tol * np.linalg.norm(k * u ** p):
            raise SolverError("Newton did not converge", trace=trace)
    full = boundary.values.ravel().copy()
    full[I] = u
    return Field(grid, full, info={"p": p, "residuals": trace})


def continuation(K, grid: Grid, boundary: Field, schedule=DEFAULT_SCHEDULE, initial: Field = None, **cfg_kw):
    """Warm-started solves along the p schedule; returns [(Field, tau)]."""
    out = []
    guess = initial
    for p in schedule:
        u = solve_subcritical(K, SolverConfig(p=p, continuation_schedule=tuple(schedule), **cfg_kw), grid, boundary, guess)
        out.append((u, 3.0 - p))
        guess = u
    return out


def first_eigenpair(grid: Grid, tol=1e-13, max_iter=500):
    """(lambda_1, psi_1) of L on the box with Dirichlet data; psi_1 > 0 and
    normalized so that int psi_1 L psi_1 = lambda_1, i.e. int psi_1^2 = 1."""
    L_II, _, I, _ = conformal_operator(grid)
    lu = factor(L_II)
    w = grid.cell_volume
    v = np.ones(L_II.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        v_new = lu.solve(v)
        v_new /= np.sqrt(w * (v_new @ v_new))
        lam_new = w * (v_new @ (L_II @ v_new))
        done = abs(lam_new - lam) <= tol * abs(lam_new) and np.linalg.norm(v_new - v) * np.sqrt(w) <= 1e-10
        v, lam = v_new, lam_new
        if done:
            break
    if np.sum(v) < 0:
        v = -v
    if np.any(v <= 0):
        raise SolverError("first eigenfunction is not positive; grid too coarse", trace=[lam])
    full = np.zeros(grid.nx * grid.ny * grid.nt)
    full[I] = v
    return float(lam), Field(grid, full)


def linearized_spectrum_check(grid: Grid, k=10):
    """Lowest k eigenvalues (ascending) and eigenvectors of
    u -> u - 2 (int u psi_1) psi_1 - lambda_1 L^{-1} u, plus (lambda_1, psi_1)."""
    lam1, psi = first_eigenpair(grid)
    L_II, _, I, _ = conformal_operator(grid)
    lu = factor(L_II)
    w = grid.cell_volume
    q = psi.values.ravel()[I]

    def matvec(u):
        u = np.ravel(u)
        return u - 2.0 * w * (q @ u) * q - lam1 * lu.solve(u)

    n = len(q)
    T = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    v0 = np.ones(n) / np.sqrt(n)
    vals, vecs = spla.eigsh(T, k=k, which="SA", v0=v0, tol=1e-13, ncv=max(4 * k, 40))
    order = np.argsort(vals)
    return vals[order], vecs[:, order], lam1, psi


# ---- blow-up diagnostics ----

def find_peaks(u: Field, isolation=10.0):
    """Strict 3^3 local maxima in the interior, isolated by isolation * hx
    (gauge distance), refined by per-axis quadratic fits. Returns
    [((x, y, t), M)] sorted by decreasing height."""
    v = u.values
    g = u.grid
    c = v[1:-1, 1:-1, 1:-1]
    strict = np.ones(c.shape, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if di == dj == dk == 0:
                    continue
                nb = v[1 + di:v.shape[0] - 1 + di, 1 + dj:v.shape[1] - 1 + dj, 1 + dk:v.shape[2] - 1 + dk]
                strict &= c > nb
    cand = np.argwhere(strict) + 1
    heights = v[tuple(cand.T)]
    order = np.argsort(-heights, kind="stable")
    axes = g.axes()
    h = g.spacing
    kept = []
    for n in order:
        i, j, k = cand[n]
        loc = []
        for ax, (a, b) in enumerate(((i, 0), (j, 1), (k, 2))):
            e = np.zeros(3, dtype=int)
            e[ax] = 1
            fm = v[i - e[0], j - e[1], k - e[2]]
            fp = v[i + e[0], j + e[1], k + e[2]]
            f0 = v[i, j, k]
            den = fm - 2 * f0 + fp
            off = 0.5 * (fm - fp) / den if den < 0 else 0.0
            loc.append(axes[ax][a] + np.clip(off, -0.5, 0.5) * h[ax])
        loc = tuple(float(s) for s in loc)
        if any(_gauge(loc, q) < isolation * g.hx for q, _ in kept):
            continue
        M = float(u.sample(*(np.array([s]) for s in loc))[0]) if u.exact is not None else _quad_height(v, i, j, k)
        kept.append((loc, M))
    return kept


def _quad_height(v, i, j, k):
    f0 = v[i, j, k]
    M = f0
    for e in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
        fm = v[i - e[0], j - e[1], k - e[2]]
        fp = v[i + e[0], j + e[1], k + e[2]]
        den = fm - 2 * f0 + fp
        if den < 0:
            M += -0.125 * (fp - fm) ** 2 / den
    return float(M)


def _gauge(a, b):
    u, v, s = mul_xyt(-a[0], -a[1], -a[2], b[0], b[1], b[2])
    return float(norm_xyt(u, v, s))


def _in_box(grid, x, y, t):
    X, Y, T = grid.box
    return (np.abs(x) <= X) & (np.abs(y) <= Y) & (np.abs(t) <= T)


def _ball_samples(R, n=17):
    s = np.linspace(-1.0, 1.0, n)
    a, b, c = np.meshgrid(s * R, s * R, s * R * R, indexing="ij")
    keep = norm_xyt(a, b, c) <= R
    return a[keep], b[keep], c[keep]


def profile_error(u: Field, peak, p, K_peak, radius=None):
    """sup over the gauge ball |xi| <= R of |u(x_i . delta_r xi) / M - U(delta_s xi)|
    with r = M^{-(p-1)/2}, s the profile scale of K at the peak and
    R = max(0.3 log M, MIN_PROFILE_RADIUS) unless given."""
    loc, M = peak
    r = M ** (-(p - 1) / 2)
    R = max(0.3 * np.log(M), MIN_PROFILE_RADIUS) if radius is None else radius
    a, b, c = _ball_samples(R)
    x, y, t = mul_xyt(loc[0], loc[1], loc[2], r * a, r * b, r * r * c)
    keep = _in_box(u.grid, x, y, t)
    s = profile_scale(K_peak)
    got = u.sample(x[keep], y[keep], t[keep]) / M
    ref = U_xyt(s * a[keep], s * b[keep], s * s * c[keep])
    return float(np.max(np.abs(got - ref)))


def green_fit(u: Field, peak, window=(0.2, 0.4), n=24):
    """Least-squares c in M u ~ c d^{-2} over the gauge annulus around the
    peak; returns c / green_constant(), the coefficient against G."""
    loc, M = peak
    s = np.linspace(-window[1], window[1], n)
    a, b, c = np.meshgrid(s, s, s * window[1], indexing="ij")
    d = norm_xyt(a, b, c)
    keep = (d >= window[0]) & (d <= window[1])
    a, b, c, d = a[keep], b[keep], c[keep], d[keep]
    x, y, t = mul_xyt(loc[0], loc[1], loc[2], a, b, c)
    inside = _in_box(u.grid, x, y, t)
    if not np.any(inside):
        raise ValueError("annulus lies outside the box")
    f = M * u.sample(x[inside], y[inside], t[inside])
    q = d[inside] ** -2.0
    coef = float(q @ f / (q @ q))
    return coef / green_constant()


def predicted_green_coeff(K_peak, kappa=KAPPA):
    """a with M u -> a G at an isolated simple blow-up point of L u = K u^3."""
    return 512.0 * np.pi * kappa ** 2 / K_peak


def blowup_diagnostics(solutions, K, profile_radius=None):
    """Peak table, tau M^2, rescaled-profile errors and far-field Green
    coefficients along a family [(Field, tau)] with decreasing tau."""
    peaks, taus, tms, perr, gc = [], [], [], [], []
    for u, tau in solutions:
        pk = find_peaks(u)
        if not pk:
            raise NoBlowupError("no interior peak found")
        top = pk[0]
        kp = float(K(*(np.array([s]) for s in top[0]))[0]) if callable(K) else float(K)
        peaks.append(pk)
        taus.append(float(tau))
        tms.append(float(tau * top[1] ** 2))
        perr.append(profile_error(u, top, 3.0 - tau, kp, profile_radius))
        gc.append(green_fit(u, top))
    heights = [pk[0][1] for pk in peaks]
    half = len(heights) // 2
    if len(heights) < 2 or heights[-1] <= heights[half] * (1 + 1e-9):
        raise NoBlowupError("no blow-up detected: peak heights do not grow over the second half of the schedule")
    # growth of tau M^2 as tau -> 0; bounded families give a slope <= 0
    slope = float(np.polyfit(-np.log(taus), np.log(tms), 1)[0])
    return BlowupDiagnostics(peaks, taus, tms, perr, gc, slope)


def step_records(solutions, diag: BlowupDiagnostics):
    """Per-step structured records for reports."""
    out = []
    for n, (u, tau) in enumerate(solutions):
        out.append({
            "p": 3.0 - tau,
            "residual": u.info.get("residuals", [0.0])[-1],
            "newton_steps": len(u.info.get("residuals", [])) - 1,
            "peaks": [{"location": list(loc), "height": M} for loc, M in diag.peaks[n]],
            "tau_M_sq": diag.tau_M_sq[n],
            "profile_error": diag.profile_errors[n],
            "green_coeff": diag.green_coeffs[n],
        })
    return out


# ---- binary snapshots ----

def write_snapshot(path, u: Field, p: float):
    g = u.grid
    header = SNAPSHOT_MAGIC + _HEADER.pack(SNAPSHOT_VERSION, g.nx, g.ny, g.nt, *g.spacing, p)
    header += bytes(64 - len(header))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def read_snapshot(path):
    """(Field, p) from a snapshot file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 64 or raw[:4] != SNAPSHOT_MAGIC:
        raise FormatError("not a field snapshot")
    version, nx, ny, nt, hx, hy, ht, p = _HEADER.unpack(raw[4:4 + _HEADER.size])
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"unsupported snapshot version {version}")
    if len(raw) != 64 + 8 * nx * ny * nt:
        raise FormatError("snapshot size does not match its header")
    vals = np.frombuffer(raw[64:], dtype="<f8").reshape(nx, ny, nt)
    box = ((nx - 1) * hx / 2, (ny - 1) * hy / 2, (nt - 1) * ht / 2)
    return Field(Grid(box, nx, ny, nt), vals.copy()), p
