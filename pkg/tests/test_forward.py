from math import comb, factorial, pi

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import stirling2

from fracmag.errors import ContractionFailure, SpecViolation
from fracmag.forward import (
    ForwardModel,
    LinearProblem,
    SolverOptions,
    barrier_lambda,
    build_barrier,
    cascade_source,
    check_instance,
    check_maximum_principle,
    energy_ratio,
    linf_bound_check,
    nonlinear_residual,
    partial_bell,
    random_instance,
    solve_cascade,
    solve_linear,
    solve_nonlinear,
    solve_nonlinear_adaptive,
)
from fracmag.grid import bump
from fracmag.potentials import Nonlinearity, antisymmetric_radial_potential, cubic_preset

S = 0.5
# (1/pi)/2 * 2 * int_2^inf (2 + r)^-2 dr
LAMBDA_1D_R2 = 1 / (4 * pi)


def w1_bump(grid, amplitude=1.0):
    spec = grid.spec
    center = np.asarray(spec.w1.center)
    radius = 0.9 * float(np.min(spec.w1.hi - spec.w1.lo)) / 2
    return np.where(grid.in_w1, amplitude * bump(grid, center, radius), 0.0)


@pytest.fixture(scope="module")
def cubic96(line96):
    return cubic_preset(line96)


@pytest.fixture(scope="module")
def model96(line96, cubic96):
    return ForwardModel(line96, S, None, cubic96.q)


# --- linear problem ----------------------------------------------------------


def test_zero_data_gives_zero(line96):
    z = line96.zeros()
    sol = solve_linear(LinearProblem(None, z, z, z), line96, S)
    assert np.all(sol.u == 0)


def test_exterior_values_are_exact(line96):
    g = w1_bump(line96)
    sol = solve_linear(LinearProblem(None, line96.zeros(), line96.zeros(), g), line96, S)
    ext = ~line96.interior
    assert np.array_equal(sol.u[ext], g[ext])
    assert sol.residual_inf <= 1e-9


def test_positive_w1_datum_gives_positive_solution(line96):
    g = w1_bump(line96)
    sol = solve_linear(LinearProblem(None, line96.zeros(), line96.zeros(), g), line96, S)
    assert sol.u[line96.interior].min() > 0


def test_nonzero_interior_datum_rejected(line96):
    g = np.ones(line96.n_nodes)
    with pytest.raises(SpecViolation):
        solve_linear(LinearProblem(None, line96.zeros(), line96.zeros(), g), line96, S)


def test_negative_mass_warns(line96):
    q = np.where(line96.interior, -0.5, 0.0)
    z = line96.zeros()
    with pytest.warns(UserWarning, match="coercivity"):
        solve_linear(LinearProblem(None, q, z, z), line96, S)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_linearity(line96, seed):
    rng = np.random.default_rng(seed)
    A = antisymmetric_radial_potential(line96, 0.4)
    q = np.where(line96.interior, 0.7, 0.0)
    model = ForwardModel(line96, S, A, q)
    F1, F2 = (np.where(line96.interior, rng.standard_normal(line96.n_nodes), 0.0) for _ in range(2))
    g1, g2 = (np.where(line96.in_w1 | line96.in_w2, rng.standard_normal(line96.n_nodes), 0.0) for _ in range(2))
    a, b = rng.uniform(-2, 2, 2)
    lhs = model.solve(a * F1 + b * F2, a * g1 + b * g2)
    rhs = a * model.solve(F1, g1) + b * model.solve(F2, g2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(lhs)))


# --- barrier and bound -------------------------------------------------------


def test_barrier_lambda_frozen():
    assert barrier_lambda(1, 0.5, 2.0) == pytest.approx(LAMBDA_1D_R2, rel=1e-10)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_barrier_lambda_scaling(s):
    # substituting z = R w gives lambda(R) = R^{-2s} lambda(1)
    assert barrier_lambda(2, s, 3.0) == pytest.approx(3.0 ** (-2 * s) * barrier_lambda(2, s, 1.0), rel=1e-9)


def test_barrier_1d(line96):
    b = build_barrier(line96, S)
    assert b.R == pytest.approx(2.0)
    assert b.C == pytest.approx(4 * pi, rel=1e-10)
    assert b.achieved >= 0.95
    assert b.phi.min() >= 0
    assert b.phi[line96.interior].max() <= b.C + 1e-12


def test_barrier_2d_with_drift(disc24):
    A = antisymmetric_radial_potential(disc24, 0.5)
    b = build_barrier(disc24, S, A=A)
    assert b.achieved >= 0.95


def test_barrier_scales_linearly(line96):
    b = build_barrier(line96, S)
    model = ForwardModel(line96, S)
    np.testing.assert_allclose(model.apply(b.phi / 2), model.apply(b.phi) / 2, rtol=1e-14)


def test_bound_with_unit_source(line96):
    b = build_barrier(line96, S)
    F = np.where(line96.interior, 1.0, 0.0)
    p = LinearProblem(None, line96.zeros(), F, line96.zeros())
    rep = linf_bound_check(solve_linear(p, line96, S), p, b, line96)
    assert rep.passed
    assert rep.bound == pytest.approx(4 * pi)
    assert 0 < rep.norm_u < 4 * pi


def test_bound_without_source(line96):
    b = build_barrier(line96, S)
    g = w1_bump(line96, 0.7)
    p = LinearProblem(None, line96.zeros(), line96.zeros(), g)
    rep = linf_bound_check(solve_linear(p, line96, S), p, b, line96)
    assert rep.passed
    assert rep.bound == np.max(np.abs(g))


def test_bound_margin_for_zero_solution(line96):
    b = build_barrier(line96, S)
    z = line96.zeros()
    p = LinearProblem(None, z, z, z)
    rep = linf_bound_check(solve_linear(p, line96, S), p, b, line96)
    assert rep.margin == rep.bound == 0.0


# --- semilinear problem ------------------------------------------------------


def test_linear_nonlinearity_converges_in_one_step(line96):
    a = Nonlinearity.linear(line96, 1.0)
    g = w1_bump(line96, 0.3)
    sol = solve_nonlinear(None, a, g, line96, S)
    u0 = ForwardModel(line96, S, None, a.q).solve(None, g)
    assert sol.iterations == 1
    np.testing.assert_array_equal(sol.u, u0)


def test_picard_limit_is_fixed_point(line96, cubic96, model96):
    opts = SolverOptions()
    sol = solve_nonlinear(None, cubic96, w1_bump(line96, 0.4), line96, S, opts, model=model96)
    assert sol.contraction_estimate < 1
    assert nonlinear_residual(model96, cubic96, sol.u) <= 2 * opts.tol_picard * model96.norm_inf
    assert sol.residual_inf <= 2 * opts.tol_picard * model96.norm_inf


def test_picard_uniqueness(line96, cubic96, model96):
    opts = SolverOptions()
    g = w1_bump(line96, 0.4)
    u1 = solve_nonlinear(None, cubic96, g, line96, S, opts, model=model96).u
    v0 = np.where(line96.interior, 0.3 * np.cos(3 * line96.points[:, 0]), 0.0)
    u2 = solve_nonlinear(None, cubic96, g, line96, S, opts, v0=v0, model=model96).u
    assert np.max(np.abs(u1 - u2)) <= 2 * opts.tol_picard


def test_contraction_improves_as_amplitude_halves(line96, cubic96, model96):
    factors = []
    for amp in (0.5, 0.25, 0.125):
        sol = solve_nonlinear(None, cubic96, w1_bump(line96, amp), line96, S, model=model96)
        factors.append(sol.contraction_estimate)
    assert factors[0] < 1
    assert factors[0] > factors[1] > factors[2]


def test_amplitude_limit_enforced(line96, cubic96, model96):
    with pytest.raises(SpecViolation):
        solve_nonlinear(None, cubic96, w1_bump(line96, 0.9), line96, S, SolverOptions(eps0=0.5), model=model96)


def test_large_data_breaks_contraction(line96, model96):
    a = cubic_preset(line96, c3_scale=20.0)
    a = Nonlinearity(line96, a.coeffs, radius=np.inf)
    g = w1_bump(line96, 40.0)
    with pytest.raises(ContractionFailure) as info:
        solve_nonlinear(None, a, g, line96, S, SolverOptions(eps0=100.0), model=model96)
    assert info.value.suggested_amplitude == np.max(np.abs(g)) / 2


def test_adaptive_amplitude_halves_until_convergence(line96, model96):
    a = cubic_preset(line96, c3_scale=20.0)
    a = Nonlinearity(line96, a.coeffs, radius=np.inf)
    sol, amp = solve_nonlinear_adaptive(None, a, w1_bump(line96), 40.0, line96, S, model=model96)
    assert amp < 40.0
    assert sol.contraction_estimate < 1


def test_quadratic_remainder(line96, cubic96, model96):
    eps = np.array([0.2, 0.1, 0.05, 0.025])
    f = w1_bump(line96)
    rem = []
    for e in eps:
        u = solve_nonlinear(None, cubic96, e * f, line96, S, model=model96).u
        rem.append(np.max(np.abs(u - model96.solve(None, e * f))))
    slope = np.polyfit(np.log(eps), np.log(rem), 1)[0]
    assert abs(slope - 2.0) <= 0.15


def test_energy_ratio_nonincreasing(line96, cubic96, model96):
    f = w1_bump(line96)
    ratios = [energy_ratio(line96, S, None, cubic96, e * f, model=model96) for e in (0.4, 0.2, 0.1)]
    assert all(np.isfinite(ratios))
    assert ratios[0] >= ratios[1] - 1e-9 >= ratios[2] - 2e-9


# --- Bell polynomials and cascade --------------------------------------------


@pytest.mark.parametrize("n", range(1, 8))
@pytest.mark.parametrize("k", range(1, 8))
def test_bell_with_unit_arguments_gives_stirling(n, k):
    if k > n:
        assert partial_bell(n, k, [1.0] * n) == 0
    else:
        assert partial_bell(n, k, [1.0] * n) == stirling2(n, k, exact=True)


@pytest.mark.parametrize("n,k", [(n, k) for n in range(1, 8) for k in range(1, n + 1)])
def test_bell_with_factorials_gives_lah(n, k):
    xs = [float(factorial(j)) for j in range(1, n + 1)]
    lah = comb(n - 1, k - 1) * factorial(n) // factorial(k)
    assert partial_bell(n, k, xs) == lah


def test_bell_low_orders():
    x1, x2, x3 = 1.7, -0.4, 2.3
    assert partial_bell(3, 2, [x1, x2, x3]) == pytest.approx(3 * x1 * x2)
    assert partial_bell(4, 2, [x1, x2, x3]) == pytest.approx(4 * x1 * x3 + 3 * x2**2)
    assert partial_bell(2, 2, [x1, x2]) == pytest.approx(x1**2)


def test_cascade_first_order_is_linear_solution(line96, cubic96, model96):
    f = w1_bump(line96)
    us = solve_cascade(None, cubic96, f, line96, S, 1, model=model96)
    assert len(us) == 1
    np.testing.assert_array_equal(us[0], model96.solve(None, f))


def test_cascade_second_order_source(line96, cubic96):
    u1 = np.linspace(-1, 1, line96.n_nodes)
    np.testing.assert_allclose(cascade_source(cubic96, [u1], 2), cubic96.coefficient(2) * u1**2, rtol=1e-15)


def test_cascade_order_limit(line96, cubic96):
    with pytest.raises(SpecViolation):
        solve_cascade(None, cubic96, w1_bump(line96), line96, S, 4)


def test_cascade_matches_finite_differences(line96, cubic96, model96):
    f = w1_bump(line96)
    us = solve_cascade(None, cubic96, f, line96, S, 3, model=model96)
    h = 0.02
    U = {j: solve_nonlinear(None, cubic96, j * h * f, line96, S, model=model96).u for j in (-2, -1, 1, 2)}
    d1 = (U[1] - U[-1]) / (2 * h)
    d2 = (U[1] + U[-1]) / h**2
    d3 = (U[2] - 2 * U[1] + 2 * U[-1] - U[-2]) / (2 * h**3)
    for k, d in enumerate((d1, d2, d3)):
        assert np.max(np.abs(d - us[k])) <= 0.01 * np.max(np.abs(us[k]))


# --- maximum principle -------------------------------------------------------


def test_zero_instance_boundary_case(line96):
    from fracmag.forward import Instance
    from fracmag.potentials import MagneticPotential

    z = line96.zeros()
    res = check_instance(line96, S, Instance(MagneticPotential.zero(line96), z, z, z))
    assert res.admissible and res.weak_ok and not res.strict
    assert res.min_u == 0


def test_maximum_principle_batch_1d(line96):
    rng = np.random.default_rng(7)
    insts = [random_instance(line96, S, rng, positive_data=i % 2 == 0) for i in range(50)]
    rep = check_maximum_principle(line96, S, insts)
    assert rep.outside_hypothesis == 0
    assert rep.weak_violations == 0
    assert rep.strong_violations == 0


def test_flipped_drift_is_outside_hypothesis(line96):
    rng = np.random.default_rng(3)
    inst = random_instance(line96, S, rng, flip_drift=True)
    rep = check_maximum_principle(line96, S, [inst])
    assert rep.outside_hypothesis == 1
    assert rep.weak_violations == 0 and rep.strong_violations == 0


def test_singular_interior_block_detected(line96):
    from fracmag.errors import SingularSystem

    lam_min = np.linalg.eigvalsh(ForwardModel(line96, S).M_int).min()
    with pytest.raises(SingularSystem):
        ForwardModel(line96, S, None, np.where(line96.interior, -lam_min, 0.0))
