import numpy as np
import pytest
from hypothesis import given, strategies as st

from crdegree.fd_solver import Field, Grid, conformal_operator
from crdegree.reduction import (
    TAU0, U4_INTEGRAL, ReducedProblem, amplitude_band, amplitude_estimate, box_starts, energy_terms,
    functional_value, gradient_terms, reduced_energy, reduced_gradient, reduced_hessian, solve_reduced, tau_drift,
)


def random_problem(rng, n, tau=1e-3):
    while True:
        A = -rng.uniform(0.1, 2.0, (n, n))
        A = 0.5 * (A + A.T)
        A[np.diag_indices(n)] = rng.uniform(1.0, 6.0, n) + 2.0 * n
        if np.linalg.eigvalsh(A)[0] > 0.1:
            return ReducedProblem.from_entries(A, rng.uniform(0.5, 3.0, n), tau)


def test_single_point_closed_form():
    # F = m/(2 lam^2) + c log lam has its minimum at lam^2 = m / c
    m, k, tau = 6.0, 2.0, 1e-4
    prob = ReducedProblem.from_entries([[m]], [k], tau)
    sol = solve_reduced(prob)
    c = U4_INTEGRAL * tau / k
    assert sol.lambdas[0] == pytest.approx(np.sqrt(m / c), rel=1e-12)
    assert sol.hessian_min_eig > 0
    assert sol.in_box


@given(st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_gradient_against_finite_differences(n, seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, n)
    lam = box_starts(prob, 1, rng)[0]
    g = reduced_gradient(lam, prob)
    for j in range(n):
        h = 1e-5 * lam[j]
        e = np.zeros(n)
        e[j] = h
        fd = (reduced_energy(lam + e, prob) - reduced_energy(lam - e, prob)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-6, abs=1e-9 * np.abs(g).max())


@given(st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_hessian_against_finite_differences(n, seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, n)
    lam = box_starts(prob, 1, rng)[0]
    H = reduced_hessian(lam, prob)
    np.testing.assert_allclose(H, H.T, rtol=1e-13, atol=0)
    for j in range(n):
        h = 1e-5 * lam[j]
        e = np.zeros(n)
        e[j] = h
        fd = (reduced_gradient(lam + e, prob) - reduced_gradient(lam - e, prob)) / (2 * h)
        np.testing.assert_allclose(H[:, j], fd, rtol=1e-5, atol=1e-8 * np.abs(H).max())


@given(st.integers(1, 3), st.integers(0, 2 ** 31 - 1), st.floats(0.1, 10.0))
def test_scale_covariance(n, seed, a):
    # F(a lam) - F(lam) on the quadratic part is a^-2 scaling, log part shifts
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, n)
    lam = box_starts(prob, 1, rng)[0]
    M, k, tau = prob.matrix.entries, prob.k_values, prob.tau
    quad = energy_terms(lam, M, k, 0.0 * tau + 1e-300)
    quad_a = energy_terms(a * lam, M, k, 1e-300)
    assert quad_a == pytest.approx(quad / a ** 2, rel=1e-10)
    np.testing.assert_allclose(gradient_terms(a * lam, M, k, 1e-300), gradient_terms(lam, M, k, 1e-300) / a ** 3,
                               rtol=1e-10)


def test_permutation_symmetry():
    rng = np.random.default_rng(1)
    prob = random_problem(rng, 3)
    P = np.eye(3)[[2, 0, 1]]
    perm = ReducedProblem.from_entries(P @ prob.matrix.entries @ P.T, P @ prob.k_values, prob.tau)
    np.testing.assert_allclose(solve_reduced(perm).lambdas, P @ solve_reduced(prob).lambdas, rtol=1e-12)


def test_unique_minimizer_from_many_starts():
    rng = np.random.default_rng(2)
    for n in (2, 3, 4):
        prob = random_problem(rng, n)
        ref = solve_reduced(prob)
        for s in box_starts(prob, 50, rng):
            np.testing.assert_allclose(solve_reduced(prob, start=s).lambdas, ref.lambdas, rtol=1e-9)
        assert np.linalg.norm(reduced_gradient(ref.lambdas, prob)) < 1e-10 * np.abs(prob.coefficients).max() * ref.lambdas.max()


def test_minimizer_is_nondegenerate_and_in_box():
    rng = np.random.default_rng(3)
    for n in (1, 2, 3):
        sol = solve_reduced(random_problem(rng, n, tau=1e-6))
        assert sol.hessian_min_eig > 0
        assert sol.in_box


def test_tau_drift_vanishes():
    prob = random_problem(np.random.default_rng(4), 3)
    scaled, drift = tau_drift(prob, [1e-2, 1e-3, 1e-4, 1e-5])
    assert drift < 1e-10
    # lam tau^{1/2} solves a tau-free problem
    M, k = prob.matrix.entries, prob.k_values
    g = gradient_terms(scaled[0], M, k, 1.0)
    assert np.max(np.abs(g)) < 1e-10


def test_negative_mu_energy_unbounded_below():
    M = np.array([[1.0, -3.0], [-3.0, 1.0]])
    k = np.ones(2)
    vals = [energy_terms(np.full(2, 10.0 ** -j), M, k, 1e-3) for j in range(1, 6)]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < -1e6
    with pytest.raises(ValueError):
        ReducedProblem.from_entries(M, k, 1e-3)


def test_descent_and_coercivity():
    rng = np.random.default_rng(5)
    prob = random_problem(rng, 3)
    sol = solve_reduced(prob)
    F0 = reduced_energy(sol.lambdas, prob)
    for s in box_starts(prob, 20, rng):
        assert reduced_energy(s, prob) >= F0
    # energy grows as lambda -> 0 and as lambda -> infinity
    assert reduced_energy(sol.lambdas * 1e-3, prob) > F0 + 1.0
    assert reduced_energy(sol.lambdas * 1e6, prob) > F0


def test_problem_validation():
    with pytest.raises(ValueError):
        ReducedProblem.from_entries([[1.0]], [1.0], TAU0 * 2)
    with pytest.raises(ValueError):
        ReducedProblem.from_entries([[1.0]], [-1.0], 1e-3)
    with pytest.raises(ValueError):
        ReducedProblem.from_entries([[1.0]], [1.0, 2.0], 1e-3)
    with pytest.raises(ValueError):
        reduced_energy([1.0, -1.0], random_problem(np.random.default_rng(0), 2))


def test_amplitude_band_rate():
    # the band should halve (up to log) as tau -> tau / 4
    tau = 1e-12
    ratio = amplitude_band(tau) / amplitude_band(tau / 4)
    assert 1.9 <= ratio <= 2.0
    est = amplitude_estimate(ReducedProblem.from_entries([[2.0]], [4.0], 1e-4))
    assert est.values[0] == pytest.approx(1.0)
    assert est.band == pytest.approx(1e-2 * np.log(1e4))


def test_functional_value_identities():
    g = Grid((1.0, 1.0, 1.0), 9, 9, 9)
    rng = np.random.default_rng(6)
    v = np.zeros(g.shape)
    v[1:-1, 1:-1, 1:-1] = rng.uniform(0.1, 1.0, (7, 7, 7))
    u = Field(g, v)
    L_II, _, I, _ = conformal_operator(g)
    w = g.cell_volume
    x = v.ravel()[I]
    tau = 0.1
    expected = 0.5 * w * x @ (L_II @ x) - w * np.sum(x ** (4 - tau)) / (4 - tau)
    assert functional_value(u, tau, 1.0) == pytest.approx(expected, rel=1e-13)
    # quadratic part is 2-homogeneous, the nonlinear part (4 - tau)-homogeneous
    a = 1.7
    two = functional_value(Field(g, a * v), tau, 0.0) / functional_value(u, tau, 0.0)
    assert two == pytest.approx(a ** 2, rel=1e-12)
    K = lambda x, y, t: 2.0 + 0 * x
    diff = functional_value(u, tau, K) - functional_value(u, tau, 0.0)
    diff_a = functional_value(Field(g, a * v), tau, K) - functional_value(Field(g, a * v), tau, 0.0)
    assert diff_a / diff == pytest.approx(a ** (4 - tau), rel=1e-12)
