import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, strategies as st

from crdegree import dual
from crdegree.bubble import U_xyt, profile_scale
from crdegree.errors import FormatError, NoBlowupError, SolverError
from crdegree.fd_solver import (
    Field, Grid, SolverConfig, blowup_diagnostics, conformal_operator, continuation, discretize_sublaplacian,
    find_peaks, first_eigenpair, green_fit, linearized_spectrum_check, predicted_green_coeff, profile_error,
    read_snapshot, solve_subcritical, step_records, write_snapshot,
)
from crdegree.heisenberg import KAPPA, HPoint, sublaplacian_flat

SMALL = Grid((1.0, 1.0, 1.0), 9, 9, 9)


def apply(grid, f):
    v = f(*grid.mesh())
    return (discretize_sublaplacian(grid) @ v.ravel()).reshape(grid.shape)


def interior(a):
    return a[1:-1, 1:-1, 1:-1]


def test_constant_is_annihilated():
    assert np.max(np.abs(interior(apply(SMALL, lambda x, y, t: 3.0 + 0 * x)))) < 1e-12


@pytest.mark.parametrize("f, expected", [
    (lambda x, y, t: x * x + y * y, lambda x, y, t: 4.0 + 0 * x),
    (lambda x, y, t: x * t, lambda x, y, t: 4.0 * y),
    (lambda x, y, t: t * t, lambda x, y, t: 8.0 * (x * x + y * y)),
    (lambda x, y, t: y * t, lambda x, y, t: -4.0 * x),
])
def test_quadratics_are_exact(f, expected):
    X, Y, T = SMALL.mesh()
    np.testing.assert_allclose(interior(apply(SMALL, f)), KAPPA * interior(expected(X, Y, T)), atol=1e-11)


def _order(f_np, f_dual, box):
    grid, stride, errs, hs = Grid(box, 9, 9, 9), (1, 1, 1), [], []
    for _ in range(3):
        X, Y, T = grid.mesh()
        # compare on the coarse interior nodes, which every refinement contains
        sl = tuple(slice(s, n - s, s) for s, n in zip(stride, grid.shape))
        exact = np.vectorize(lambda a, b, c: sublaplacian_flat(f_dual, HPoint(a, b, c)))(X[sl], Y[sl], T[sl])
        errs.append(np.max(np.abs(apply(grid, f_np)[sl] - exact)))
        hs.append(grid.hx)
        grid, stride = grid.refine(), (2 * stride[0], 2 * stride[1], 4 * stride[2])
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


def test_consistency_order_on_smooth_function():
    f_np = lambda x, y, t: np.sin(x + 0.3) * np.cos(0.7 * y) * np.exp(0.5 * t)
    f_dual = lambda x, y, t: dual.sin(x + 0.3) * dual.cos(0.7 * y) * dual.exp(0.5 * t)
    assert _order(f_np, f_dual, (1.0, 1.0, 0.25)) >= 1.9


def test_bubble_residual_order():
    grid, stride, res, hs = Grid((0.5, 0.5, 0.25), 9, 9, 9), (1, 1, 1), [], []
    for _ in range(3):
        sl = tuple(slice(s, n - s, s) for s, n in zip(stride, grid.shape))
        U = U_xyt(*grid.mesh())
        r = -4.0 * apply(grid, U_xyt) - U ** 3
        res.append(np.max(np.abs(r[sl])))
        hs.append(grid.hx)
        grid, stride = grid.refine(), (2 * stride[0], 2 * stride[1], 4 * stride[2])
    assert np.polyfit(np.log(hs), np.log(res), 1)[0] >= 1.9


def test_refine_keeps_anisotropy():
    g = Grid((1.0, 2.0, 0.5), 9, 7, 5)
    r = g.refine()
    assert r.ht / r.hx ** 2 == pytest.approx(g.ht / g.hx ** 2)
    assert r.box == g.box


def test_operator_symmetric_positive():
    L, _, _, _ = conformal_operator(SMALL)
    assert spla.norm(L - L.T) < 1e-12 * spla.norm(L)
    assert np.linalg.eigvalsh(L.toarray())[0] > 0


def test_quarter_turn_covariance():
    # (x, y) -> (-y, x) is an automorphism that maps the grid onto itself
    f = lambda x, y, t: np.exp(0.3 * x - 0.2 * y + 0.1 * t) + x * y * t
    rot = lambda x, y, t: f(-y, x, t)
    a = apply(SMALL, rot)
    b = np.rot90(apply(SMALL, f), k=-1, axes=(0, 1))
    np.testing.assert_allclose(interior(a), interior(b), atol=1e-12)


def test_t_translation_covariance():
    g = Grid((1.0, 1.0, 1.0), 9, 9, 17)
    f = lambda x, y, t: np.cos(x + y) * np.sin(2 * t)
    shifted = lambda x, y, t: f(x, y, t + 2 * g.ht)
    np.testing.assert_allclose(apply(g, shifted)[1:-1, 1:-1, 1:-3], apply(g, f)[1:-1, 1:-1, 3:-1], atol=1e-12)


def _bubble_data(grid):
    return Field.from_function(grid, lambda x, y, t: 2.0 * U_xyt(2.0 * x, 2.0 * y, 4.0 * t))


def test_bubble_boundary_near_critical():
    errs = []
    for n in (17, 25):
        g = Grid((1.0, 1.0, 1.0), n, n, n)
        ub = _bubble_data(g)
        u = solve_subcritical(1.0, SolverConfig(p=3 - 1e-3), g, ub, ub)
        errs.append(np.max(np.abs(u.values - ub.values)) / ub.values.max())
    assert errs[0] < 0.05
    assert errs[1] < errs[0] / 2


def test_newton_quadratic_tail():
    g = Grid((1.0, 1.0, 1.0), 17, 17, 17)
    ub = _bubble_data(g)
    r = solve_subcritical(1.0, SolverConfig(p=2.9, newton_tol=1e-13), g, ub, ub).info["residuals"]
    tail = [x for x in r if x < 1e-4]
    scale = r[0]
    for a, b in zip(tail, tail[1:]):
        if b > 1e-11 * scale:
            assert np.log(b) / np.log(a) >= 1.8


def test_algebraic_covariance():
    g = Grid((1.0, 1.0, 1.0), 13, 13, 13)
    ub = _bubble_data(g)
    p, c = 2.5, 3.0
    K = lambda x, y, t: 1.0 + 0.2 * x - 0.1 * t
    u = solve_subcritical(K, SolverConfig(p=p, newton_tol=1e-13), g, ub, ub)
    Kc = lambda x, y, t: K(x, y, t) / c ** (p - 1)
    L_II, L_IB, I, B = conformal_operator(g)
    v = c * u.values.ravel()
    res = L_II @ v[I] + L_IB @ v[B] - Kc(*(m.ravel()[I] for m in g.mesh())) * v[I] ** p
    assert np.max(np.abs(res)) < 1e-10 * c ** p * np.max(u.values) ** p
    w = solve_subcritical(Kc, SolverConfig(p=p, newton_tol=1e-13), g, Field(g, c * ub.values), Field(g, c * u.values))
    np.testing.assert_allclose(w.values, c * u.values, rtol=1e-10)


def test_zero_boundary_positivity_contract():
    g = Grid((0.5, 0.5, 0.25), 9, 9, 9)
    lam1, psi = first_eigenpair(g)
    zero = Field(g, np.zeros(g.shape))
    for amp in (0.5, 2.0, 20.0):
        try:
            u = solve_subcritical(1.0, SolverConfig(p=2.0), g, zero, Field(g, amp * lam1 * psi.values / psi.values.max()))
        except SolverError as err:
            assert err.trace
            continue
        assert np.all(interior(u.values) > 0) or np.all(interior(u.values) == 0)


def test_maximum_principle():
    g = Grid((1.0, 1.0, 1.0), 13, 13, 13)
    u = solve_subcritical(lambda x, y, t: 1.0 + 0.5 * x * x, SolverConfig(p=2.0), g, _bubble_data(g))
    assert np.all(interior(u.values) > 0)


def test_validation():
    with pytest.raises(ValueError):
        SolverConfig(p=3.0)
    with pytest.raises(ValueError):
        SolverConfig(damping=0.0)
    with pytest.raises(ValueError):
        SolverConfig(continuation_schedule=(2.0, 3.5))
    with pytest.raises(ValueError):
        Grid((1.0, 1.0), 5, 5, 5)
    with pytest.raises(ValueError):
        Grid((1.0, 1.0, 1.0), 2, 5, 5)
    g = SMALL
    with pytest.raises(ValueError):
        solve_subcritical(1.0, SolverConfig(), g, Field(g, -np.ones(g.shape)))
    with pytest.raises(ValueError):
        solve_subcritical(-1.0, SolverConfig(), g, Field(g, np.ones(g.shape)))


def test_first_eigenpair():
    lam, psi = first_eigenpair(SMALL)
    assert lam > 0
    assert np.all(interior(psi.values) > 0)
    L, _, I, _ = conformal_operator(SMALL)
    v = psi.values.ravel()[I]
    w = SMALL.cell_volume
    assert w * v @ v == pytest.approx(1.0, rel=1e-12)
    assert w * v @ (L @ v) == pytest.approx(lam, rel=1e-10)
    assert np.linalg.eigvalsh(L.toarray())[0] == pytest.approx(lam, rel=1e-10)
    big, _ = first_eigenpair(Grid((1.5, 1.5, 1.5), 9, 9, 9))
    assert big < lam


def test_linearized_spectrum_small_grid():
    g = Grid((1.0, 1.0, 1.0), 11, 11, 11)
    vals, vecs, lam1, psi = linearized_spectrum_check(g, k=6)
    assert vals[0] == pytest.approx(-2.0, abs=1e-6)
    assert np.sum(vals < 0) == 1
    assert np.all((vals[1:] > 0) & (vals[1:] < 1))
    q = psi.values.ravel()[conformal_operator(g)[2]]
    assert abs(vecs[:, 0] @ q) / np.linalg.norm(q) >= 1 - 1e-8
    # dense oracle on the same operator: 1 - lam1 / lam_j
    L = conformal_operator(g)[0].toarray()
    ev = np.linalg.eigvalsh(L)
    np.testing.assert_allclose(vals[1:], np.sort(1 - lam1 / ev[1:6]), atol=1e-8)


def test_find_peaks_and_isolation():
    g = Grid((1.0, 1.0, 1.0), 21, 21, 21)
    bump = lambda x, y, t, c: np.exp(-20 * ((x - c) ** 2 + y ** 2 + (t - 0.1) ** 2))
    u = Field.from_function(g, lambda x, y, t: 3 * bump(x, y, t, -0.5) + 2 * bump(x, y, t, 0.5))
    pk = find_peaks(u, isolation=2.0)
    assert len(pk) == 2
    assert pk[0][1] == pytest.approx(3.0, rel=0.05) and pk[0][0][0] == pytest.approx(-0.5, abs=0.05)
    assert pk[1][0][0] == pytest.approx(0.5, abs=0.05)
    assert len(find_peaks(u, isolation=20.0)) == 1
    flat = Field(g, np.ones(g.shape))
    assert find_peaks(flat) == []


def test_snapshot_roundtrip(tmp_path):
    g = Grid((1.0, 0.5, 0.25), 5, 7, 9)
    u = Field(g, np.random.default_rng(0).standard_normal(g.shape))
    path = tmp_path / "u.hfld"
    write_snapshot(path, u, 2.75)
    raw = path.read_bytes()
    assert raw[:4] == b"HFLD" and len(raw) == 64 + 8 * 5 * 7 * 9
    v, p = read_snapshot(path)
    assert p == 2.75
    np.testing.assert_array_equal(v.values, u.values)
    np.testing.assert_allclose(v.grid.box, g.box, rtol=1e-15)
    path.write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        read_snapshot(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_snapshot(path)
    path.write_bytes(raw[:4] + (9).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError):
        read_snapshot(path)


def synthetic_family(K=1.0, taus=(1e-4, 1e-5, 1e-6, 1e-7)):
    g = Grid((0.5, 0.5, 0.5), 9, 9, 9)
    a = 1.0 / np.sqrt(K)
    out = []
    for tau in taus:
        lam = tau ** -0.5
        s = profile_scale(K)
        f = (lambda lam: lambda x, y, t: a * s * lam * U_xyt(s * lam * x, s * lam * y, (s * lam) ** 2 * t))(lam)
        out.append((Field.from_function(g, f, keep_exact=True), tau))
    return out


@pytest.mark.parametrize("K", [1.0, 4.0])
def test_synthetic_bubble_family(K):
    sols = synthetic_family(K)
    d = blowup_diagnostics(sols, K)
    M = [pk[0][1] for pk in d.peaks]
    np.testing.assert_allclose(d.tau_M_sq, d.tau_M_sq[0], rtol=1e-6)
    assert np.all(np.diff(d.profile_errors) < 0) and d.profile_errors[-1] < 1e-5
    np.testing.assert_allclose(d.green_coeffs[-1], predicted_green_coeff(K), rtol=1e-3)
    assert abs(d.growth_exponent) < 0.01
    assert M == sorted(M)
    recs = step_records(sols, d)
    assert [r["p"] for r in recs] == [3 - t for _, t in sols]


def test_no_blowup_detected():
    g = Grid((1.0, 1.0, 1.0), 9, 9, 9)
    same = Field.from_function(g, lambda x, y, t: U_xyt(x, y, t), keep_exact=True)
    with pytest.raises(NoBlowupError):
        blowup_diagnostics([(same, 0.1), (same, 0.05), (same, 0.01)], 1.0)
    with pytest.raises(NoBlowupError):
        blowup_diagnostics([(Field(g, np.ones(g.shape)), 0.1)], 1.0)


@given(st.floats(1.0, 50.0))
def test_profile_error_vanishes_for_exact_bubbles(lam):
    g = Grid((1.0, 1.0, 1.0), 9, 9, 9)
    f = lambda x, y, t: lam * U_xyt(lam * x, lam * y, lam * lam * t)
    u = Field.from_function(g, f, keep_exact=True)
    assert profile_error(u, ((0.0, 0.0, 0.0), lam), 3.0, 1.0) < 1e-12


def test_green_fit_on_exact_kernel():
    g = Grid((1.0, 1.0, 1.0), 8, 8, 8)
    from crdegree.sphere import green_constant
    from crdegree.heisenberg import norm_xyt
    u = Field.from_function(g, lambda x, y, t: 0.7 * green_constant() * norm_xyt(x, y, t) ** -2, keep_exact=True)
    assert green_fit(u, ((0.0, 0.0, 0.0), 1.0)) == pytest.approx(0.7, rel=1e-12)
