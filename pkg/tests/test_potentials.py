import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracmag.errors import RadiusExceeded, SpecViolation
from fracmag.grid import build_grid, standard_domain
from fracmag.nonlocal_ops import assemble_magnetic, pair_geometry
from fracmag.potentials import (
    MagneticPotential,
    Nonlinearity,
    antisymmetric_radial_potential,
    check_admissibility,
    constant_potential,
    decompose,
    eval_a,
    eval_dz,
    gauge_equivalent,
    gauge_invariants,
    gauge_partner,
    mass_term,
    separable_bump_potential,
)


@pytest.fixture(scope="module")
def line16():
    return build_grid(standard_domain(1), 16)


def random_potential(grid, rng):
    values = rng.standard_normal((grid.n_nodes, grid.n_nodes, grid.dim))
    mask = grid.interior[:, None] & grid.interior[None, :]
    return MagneticPotential(grid, values * mask[:, :, None])


def test_constant_potential_parts(line96):
    A = constant_potential(line96, [0.7])
    p = decompose(A)
    np.testing.assert_array_equal(p.sym, A.values)
    assert np.max(np.abs(p.anti)) == 0
    np.testing.assert_allclose(p.par, A.values, atol=1e-15)
    assert np.max(np.abs(p.perp)) <= 1e-15


def test_antisymmetric_potential_parts(disc24):
    A = antisymmetric_radial_potential(disc24, 1.0)
    p = decompose(A)
    assert np.max(np.abs(p.sym)) == 0
    np.testing.assert_array_equal(p.anti, A.values)
    diff = disc24.points[None, :, :] - disc24.points[:, None, :]
    dot = np.einsum("ijk,ijk->ij", p.anti_par, diff)
    assert dot.min() >= 0


def test_random_reassembly(line16, rng):
    A = random_potential(line16, rng)
    p = decompose(A)
    np.testing.assert_allclose(p.sym + p.anti, A.values, atol=1e-14)
    np.testing.assert_allclose(p.par + p.perp, A.values, atol=1e-14)


def test_decomposition_projections(disc24, rng):
    A = random_potential(disc24, rng)
    p = decompose(A)
    assert np.max(np.abs(decompose(MagneticPotential(disc24, p.sym)).anti)) <= 1e-15
    assert np.max(np.abs(decompose(MagneticPotential(disc24, p.anti)).sym)) <= 1e-15
    # the perpendicular part never enters A . (y - x)
    diff = disc24.points[None, :, :] - disc24.points[:, None, :]
    lhs = np.einsum("ijk,ijk->ij", p.anti_par, diff)
    rhs = np.einsum("ijk,ijk->ij", p.anti, diff)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_complex_potential_rejected(line16):
    values = np.zeros((line16.n_nodes, line16.n_nodes, 1), dtype=complex)
    with pytest.raises(ValueError, match="real-valued"):
        MagneticPotential(line16, values)


def test_support_leak_detected(line96):
    values = np.zeros((line96.n_nodes, line96.n_nodes, 1))
    values[0, 1] = 1.0
    A = MagneticPotential(line96, values)
    assert not A.support_ok()
    with pytest.raises(SpecViolation):
        assemble_magnetic(line96, 0.5, A)
    a = Nonlinearity.linear(line96, 1.0)
    assert not check_admissibility(A, a, line96, 0.5).support_ok


def test_mass_term_zero_and_antisymmetric(line96):
    assert np.all(mass_term(None, line96, 0.5) == 0)
    assert np.all(mass_term(MagneticPotential.zero(line96), line96, 0.5) == 0)
    A = antisymmetric_radial_potential(line96, 0.8)
    geo = pair_geometry(line96, 0.5)
    quad = np.sum(geo.mu * np.sum(A.values**2, axis=2), axis=1) / geo.weights
    np.testing.assert_allclose(mass_term(A, line96, 0.5), quad, rtol=1e-13)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_mass_term_self_convergence(s):
    # fine nodes coincide with midpoints of coarse pairs, so compare at the
    # coarse-grid profile interpolated linearly onto the fine grid
    out = []
    for n in (64, 128, 256):
        grid = build_grid(standard_domain(1), n)
        A = separable_bump_potential(grid, [0.6]) + antisymmetric_radial_potential(grid, 0.4)
        m = mass_term(A, grid, s)
        x = grid.points[:, 0]
        out.append(np.interp(np.linspace(-0.5, 0.5, 11), x, m))
    d1 = np.max(np.abs(out[0] - out[1]))
    d2 = np.max(np.abs(out[1] - out[2]))
    rate = np.log2(d1 / d2)
    assert rate >= min(1.0, 2 - 2 * s) - 0.3


def test_admissibility_examples(line96):
    a_pos = Nonlinearity.linear(line96, 1.0)
    assert check_admissibility(None, a_pos, line96, 0.5).passed
    a_neg = Nonlinearity.linear(line96, -1.0)
    rep = check_admissibility(None, a_neg, line96, 0.5)
    assert not rep.mass_ok
    assert rep.mass_worst == pytest.approx(-1.0)
    assert any("mass" in v for v in rep.violations())


def test_admissibility_cubic_with_drift(line96):
    # a = z + z^3: c1 = 1, c3 = 6
    c = np.zeros((3, line96.n_nodes))
    c[0], c[2] = 1.0, 6.0
    a = Nonlinearity(line96, c, radius=1.0)
    A = antisymmetric_radial_potential(line96, 0.5)
    rep = check_admissibility(A, a, line96, 0.5)
    assert rep.passed
    z = np.linspace(-1, 1, 2001)
    assert rep.mass_worst <= (mass_term(A, line96, 0.5)[line96.interior] + (1 + 3 * z[:, None] ** 2).min(0)).min() + 1e-12


def test_flipped_drift_flagged(line96):
    A = antisymmetric_radial_potential(line96, -0.5)
    rep = check_admissibility(A, Nonlinearity.linear(line96, 1.0), line96, 0.5)
    assert not rep.drift_ok


def test_dz_min_uses_critical_points(line96):
    # d_z a = 1 - 4 z + 4 z^2 has its minimum 0 at z = 1/2, between sample points
    c = np.zeros((3, line96.n_nodes))
    c[0], c[1], c[2] = 1.0, -4.0, 8.0
    a = Nonlinearity(line96, c, radius=1.0)
    rep = check_admissibility(None, a, line96, 0.5)
    assert rep.mass_worst == pytest.approx(0.0, abs=1e-12)


def test_gauge_invariants_without_magnetic_part(line96):
    q = np.where(line96.interior, 0.4, 0.0)
    inv = gauge_invariants(None, q, line96, 0.5)
    assert np.max(np.abs(inv.kernel)) == 0
    np.testing.assert_array_equal(inv.sigma, q)


def test_gauge_partner_preserves_invariants_and_operator(disc24):
    A = antisymmetric_radial_potential(disc24, 0.6)
    q = np.where(disc24.interior, 1.0, 0.0)
    extra = separable_bump_potential(disc24, [0.5, -0.3])
    A2, q2 = gauge_partner(A, q, extra, disc24, 0.5)
    i1, i2 = gauge_invariants(A, q, disc24, 0.5), gauge_invariants(A2, q2, disc24, 0.5)
    assert np.max(np.abs(i1.kernel - i2.kernel)) <= 1e-12
    assert np.max(np.abs(i1.sigma - i2.sigma)) <= 1e-12
    assert gauge_equivalent((A, q), (A2, q2), disc24, 0.5)
    M1 = assemble_magnetic(disc24, 0.5, A, q).matrix
    M2 = assemble_magnetic(disc24, 0.5, A2, q2).matrix
    assert np.max(np.abs(M1 - M2)) <= 1e-8


def test_gauge_partner_rejects_drift_change(line96):
    A = antisymmetric_radial_potential(line96, 0.2)
    with pytest.raises(SpecViolation):
        gauge_partner(A, np.ones(line96.n_nodes), A, line96, 0.5)


def test_antisymmetrizing_changes_sigma_through_quadratic_term(line96):
    A = antisymmetric_radial_potential(line96, 0.5) + separable_bump_potential(line96, [0.4])
    anti = MagneticPotential(line96, decompose(A).anti)
    q = np.ones(line96.n_nodes)
    i1, i2 = gauge_invariants(A, q, line96, 0.5), gauge_invariants(anti, q, line96, 0.5)
    np.testing.assert_allclose(i1.kernel, i2.kernel, atol=1e-15)
    geo = pair_geometry(line96, 0.5)
    quad_anti = np.sum(geo.mu * np.sum(anti.values**2, axis=2), axis=1) / geo.weights
    np.testing.assert_allclose(i2.sigma - q * line96.interior, quad_anti, rtol=1e-12, atol=1e-14)


def test_gauge_equivalence_relation(line96):
    q = np.where(line96.interior, 1.0, 0.0)
    A = antisymmetric_radial_potential(line96, 0.3)
    pairs = [(A, q)]
    for v in (0.2, -0.4):
        pairs.append(gauge_partner(A, q, separable_bump_potential(line96, [v]), line96, 0.5))
    for p in pairs:
        assert gauge_equivalent(p, p, line96, 0.5)
    for p1 in pairs:
        for p2 in pairs:
            assert gauge_equivalent(p1, p2, line96, 0.5) == gauge_equivalent(p2, p1, line96, 0.5) is True
    assert not gauge_equivalent((A, q), (A, q + 1.0), line96, 0.5)


def test_eval_polynomial(line96):
    # a(z) = z^2 means c2 = 2
    c = np.zeros((2, line96.n_nodes))
    c[1] = 2.0
    a = Nonlinearity(line96, c, radius=5.0)
    u = np.where(line96.interior, 3.0, 0.0)
    inner = line96.interior
    assert np.all(eval_a(a, u)[inner] == 9.0)
    assert np.all(eval_dz(a, u, 1)[inner] == 6.0)
    assert np.all(eval_dz(a, u, 2)[inner] == 2.0)
    assert np.all(eval_a(a, np.zeros(line96.n_nodes)) == 0)


def test_radius_exceeded(line96):
    a = Nonlinearity.linear(line96, 1.0, radius=0.5)
    with pytest.raises(RadiusExceeded):
        eval_a(a, np.ones(line96.n_nodes))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), z=st.floats(-0.8, 0.8))
def test_eval_dz_matches_finite_difference(seed, z):
    grid = build_grid(standard_domain(1), 16)
    rng = np.random.default_rng(seed)
    a = Nonlinearity(grid, rng.uniform(-2, 2, (4, grid.n_nodes)), radius=1.0)
    dz = 1e-4
    u = np.full(grid.n_nodes, z)
    fd = (eval_a(a, u + dz) - eval_a(a, u - dz)) / (2 * dz)
    inner = grid.interior
    # truncation of the central difference: dz^2/6 |a'''| with |a'''| <= 2 + 2 + 2
    np.testing.assert_allclose(fd[inner], eval_dz(a, u, 1)[inner], atol=dz**2 + 1e-10)
