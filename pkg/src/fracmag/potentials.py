"""Two-point magnetic potentials, truncated-Taylor nonlinearities and gauge invariants."""

from __future__ import annotations

import hashlib
from math import factorial
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import RadiusExceeded, SpecViolation
from .grid import Grid, bump
from .nonlocal_ops import frac_divergence, pair_geometry

ADMISSIBILITY_TOL = 1e-10
GAUGE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class MagneticPotential:
    """A(x_i, x_j) in R^n for every ordered node pair, shape (N, N, n)."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.iscomplexobj(self.values):
            raise ValueError("magnetic potential must be real-valued")
        values = np.asarray(self.values, dtype=float)
        N, n = self.grid.n_nodes, self.grid.dim
        if values.shape != (N, N, n):
            raise ValueError(f"expected shape {(N, N, n)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("magnetic potential has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_mass_cache", {})

    @cached_property
    def parts(self) -> "PotentialDecomposition":
        return _decompose(self)

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros((grid.n_nodes, grid.n_nodes, grid.dim)))

    @classmethod
    def from_function(cls, grid, func):
        """``func(x, y)`` receives broadcastable (N, 1, n) and (1, N, n) arrays."""
        x = grid.points[:, None, :]
        y = grid.points[None, :, :]
        values = np.broadcast_to(func(x, y), (grid.n_nodes, grid.n_nodes, grid.dim))
        return cls(grid, np.array(values))

    def __add__(self, other):
        return MagneticPotential(self.grid, self.values + other.values)

    def scaled(self, factor):
        return MagneticPotential(self.grid, factor * self.values)

    def support_violation(self):
        outside = ~(self.grid.interior[:, None] & self.grid.interior[None, :])
        if not outside.any():
            return 0.0
        return float(np.max(np.abs(self.values[outside])))

    def support_ok(self):
        return self.support_violation() == 0.0

    def digest(self):
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()[:16]


def _omega_profile(grid):
    """Smooth bump filling omega, vanishing on its boundary."""
    omega = grid.spec.omega
    radius = omega.size[0] if omega.kind == "ball" else min(omega.size)
    chi = bump(grid, omega.center, radius)
    return np.where(grid.interior, chi, 0.0)


def constant_potential(grid, vector):
    """A = c on omega x omega, zero elsewhere."""
    c = np.broadcast_to(np.asarray(vector, dtype=float), (grid.dim,))
    mask = grid.interior[:, None] & grid.interior[None, :]
    return MagneticPotential(grid, mask[:, :, None] * c)


def separable_bump_potential(grid, vector, profile=None):
    """A(x, y) = c chi(x) chi(y): symmetric."""
    chi = _omega_profile(grid) if profile is None else profile
    c = np.broadcast_to(np.asarray(vector, dtype=float), (grid.dim,))
    return MagneticPotential(grid, (chi[:, None] * chi[None, :])[:, :, None] * c)


def antisymmetric_radial_potential(grid, strength, profile=None):
    """A(x, y) = k (y - x) chi(x) chi(y): antisymmetric and parallel."""
    chi = _omega_profile(grid) if profile is None else profile
    diff = grid.points[None, :, :] - grid.points[:, None, :]
    return MagneticPotential(grid, strength * (chi[:, None] * chi[None, :])[:, :, None] * diff)


@dataclass(frozen=True, eq=False)
class PotentialDecomposition:
    sym: np.ndarray
    anti: np.ndarray
    par: np.ndarray
    perp: np.ndarray
    sym_par: np.ndarray
    anti_par: np.ndarray


def _parallel(values, grid):
    diff = grid.points[:, None, :] - grid.points[None, :, :]  # x - y
    d2 = np.sum(diff**2, axis=2)
    off = d2 > 0
    coef = np.zeros_like(d2)
    coef[off] = np.einsum("ijk,ijk->ij", values, diff)[off] / d2[off]
    par = coef[:, :, None] * diff
    diag = np.arange(grid.n_nodes)
    par[diag, diag] = values[diag, diag]
    return par


def decompose(A: MagneticPotential) -> PotentialDecomposition:
    """Symmetric / antisymmetric and parallel / perpendicular parts of A (cached on A)."""
    return A.parts


def _decompose(A: MagneticPotential) -> PotentialDecomposition:
    values = A.values
    sym = 0.5 * (values + values.transpose(1, 0, 2))
    anti = values - sym
    par = _parallel(values, A.grid)
    return PotentialDecomposition(
        sym=sym,
        anti=anti,
        par=par,
        perp=values - par,
        sym_par=_parallel(sym, A.grid),
        anti_par=_parallel(anti, A.grid),
    )


def mass_term(A: MagneticPotential, grid: Grid, s: float) -> np.ndarray:
    """(div^s A_{s||})(x) + sum_j |A(x, y_j)|^2 under the pair measure."""
    if A is None:
        return np.zeros(grid.n_nodes)
    key = (grid.key, s)
    if key not in A._mass_cache:
        A._mass_cache[key] = _mass_term(A, grid, s)
    return A._mass_cache[key].copy()


def _mass_term(A, grid, s):
    geo = pair_geometry(grid, s)
    parts = decompose(A)
    div = frac_divergence(grid, s, parts.sym_par)
    quad = np.sum(geo.mu * np.sum(A.values**2, axis=2), axis=1) / geo.weights
    out = div + quad
    if not np.all(np.isfinite(out)):
        from .errors import NumericalOverflow

        raise NumericalOverflow("mass term quadrature is not finite")
    return out


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """a(x, z) = sum_{k=1}^K c_k(x) z^k / k!  with c_k = d^k a / dz^k (x, 0).

    ``coeffs`` has shape (K, N); rows are zero outside omega.
    """

    grid: Grid
    coeffs: np.ndarray = field(repr=False)
    radius: float = 1.0

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.shape[1] != self.grid.n_nodes:
            raise ValueError("coefficient fields must cover all nodes")
        if self.radius <= 0:
            raise ValueError("validity radius must be positive")
        c = np.where(self.grid.interior[None, :], c, 0.0)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self):
        return self.coeffs.shape[0]

    @property
    def q(self):
        return self.coeffs[0]

    def coefficient(self, k):
        """c_k for k >= 1; zero beyond the truncation order."""
        if k > self.order:
            return np.zeros(self.grid.n_nodes)
        return self.coeffs[k - 1]

    def with_coefficient(self, k, field_values):
        K = max(self.order, k)
        c = np.zeros((K, self.grid.n_nodes))
        c[: self.order] = self.coeffs
        c[k - 1] = field_values
        return Nonlinearity(self.grid, c, self.radius)

    def linear_part(self):
        return Nonlinearity(self.grid, self.coeffs[:1], self.radius)

    @classmethod
    def linear(cls, grid, q, radius=1.0):
        q = np.broadcast_to(np.asarray(q, dtype=float), (grid.n_nodes,))
        return cls(grid, q[None, :], radius)


def _check_radius(a: Nonlinearity, u):
    peak = float(np.max(np.abs(u[a.grid.interior]))) if a.grid.interior.any() else 0.0
    if peak > a.radius:
        raise RadiusExceeded(f"|u| = {peak:.3g} exceeds the validity radius {a.radius:.3g}")


def eval_dz(a: Nonlinearity, u, m: int = 1) -> np.ndarray:
    """m-th z-derivative of a at z = u(x): sum_{k>=max(m,1)} c_k u^{k-m} / (k-m)!."""
    u = np.asarray(u, dtype=float)
    _check_radius(a, u)
    out = np.zeros_like(u)
    for k in range(max(m, 1), a.order + 1):
        out = out + a.coeffs[k - 1] * u ** (k - m) / factorial(k - m)
    return out


def eval_a(a: Nonlinearity, u) -> np.ndarray:
    """a(x, u(x)) from the truncated Taylor series; a(x, 0) = 0 by construction."""
    return eval_dz(a, u, 0)


@dataclass
class AdmissibilityReport:
    drift_ok: bool
    drift_worst: float
    mass_ok: bool
    mass_worst: float
    support_ok: bool
    support_worst: float

    @property
    def passed(self):
        return self.drift_ok and self.mass_ok and self.support_ok

    def violations(self):
        names = []
        if not self.drift_ok:
            names.append("drift sign: A_a|| . (y - x) >= 0")
        if not self.mass_ok:
            names.append("mass sign: div A_s|| + int |A|^2 + d_z a >= 0")
        if not self.support_ok:
            names.append("support of A in omega x omega")
        return names


def _dz_min(a: Nonlinearity, samples=101):
    """Lower bound of d_z a(x, z) over omega nodes and |z| <= R0."""
    R0 = a.radius
    idx = a.grid.interior_index
    c = a.coeffs[:, idx]
    if a.order == 1:
        return c[0].copy()
    if not np.isfinite(R0):
        raise SpecViolation("a nonlinear a needs a finite validity radius")
    z = np.linspace(-R0, R0, samples)
    # d_z a = sum_k c_k z^{k-1}/(k-1)!, a polynomial of degree K-1 in z
    poly = np.stack([c[k] / factorial(k) for k in range(a.order)], axis=0)  # coefficient of z^k
    vals = sum(poly[k][:, None] * z[None, :] ** k for k in range(a.order))
    worst = vals.min(axis=1)
    if a.order <= 4:
        # exact minimum: check interior critical points of the (<= cubic) polynomial
        for node in range(len(idx)):
            p = poly[:, node][::-1]
            crit = np.roots(np.polyder(p)) if len(p) > 2 else np.array([])
            crit = crit[np.isreal(crit)].real
            crit = crit[np.abs(crit) <= R0]
            if crit.size:
                worst[node] = min(worst[node], np.polyval(p, crit).min())
    return worst


def check_admissibility(A, a: Nonlinearity, grid: Grid, s: float, tol=ADMISSIBILITY_TOL) -> AdmissibilityReport:
    """Report on the drift-sign, mass-sign and support conditions. Never raises."""
    if A is None:
        A = MagneticPotential.zero(grid)
    parts = decompose(A)
    diff = grid.points[None, :, :] - grid.points[:, None, :]  # y - x
    drift = np.einsum("ijk,ijk->ij", parts.anti_par, diff)
    drift_worst = float(drift.min())
    m_A = mass_term(A, grid, s)
    mass = m_A[grid.interior_index] + _dz_min(a)
    mass_worst = float(mass.min())
    support_worst = A.support_violation()
    return AdmissibilityReport(
        drift_ok=drift_worst >= -tol,
        drift_worst=drift_worst,
        mass_ok=mass_worst >= -tol,
        mass_worst=mass_worst,
        support_ok=support_worst == 0.0,
        support_worst=support_worst,
    )


@dataclass(frozen=True, eq=False)
class GaugeInvariants:
    kernel: np.ndarray  # A_{a||}
    sigma: np.ndarray  # m_A + q on all nodes (meaningful on omega)


def gauge_invariants(A, q, grid: Grid, s: float) -> GaugeInvariants:
    q = np.where(grid.interior, np.asarray(q, dtype=float), 0.0)
    if A is None:
        return GaugeInvariants(np.zeros((grid.n_nodes, grid.n_nodes, grid.dim)), q)
    return GaugeInvariants(decompose(A).anti_par, mass_term(A, grid, s) + q)


def gauge_equivalent(p1, p2, grid: Grid, s: float, tol=GAUGE_TOL) -> bool:
    """(A1, q1) ~ (A2, q2): equal antisymmetric-parallel parts and equal sigma on omega."""
    g1 = gauge_invariants(*p1, grid, s)
    g2 = gauge_invariants(*p2, grid, s)
    kernel_gap = float(np.max(np.abs(g1.kernel - g2.kernel)))
    sigma_gap = float(np.max(np.abs((g1.sigma - g2.sigma)[grid.interior])))
    return kernel_gap <= tol and sigma_gap <= tol


def gauge_partner(A: MagneticPotential, q, extra: MagneticPotential, grid: Grid, s: float):
    """Add ``extra`` (with no antisymmetric-parallel part) to A and compensate q.

    Returns (A + extra, q') with sigma unchanged.
    """
    if np.max(np.abs(decompose(extra).anti_par)) > 0:
        raise SpecViolation("the added potential must have no antisymmetric-parallel part")
    A2 = A + extra
    q = np.asarray(q, dtype=float)
    q2 = q + mass_term(A, grid, s) - mass_term(A2, grid, s)
    return A2, np.where(grid.interior, q2, 0.0)


def gaussian_field(grid: Grid, amplitude, center, width):
    """amplitude * exp(-|x - center|^2 / width^2) on omega, zero elsewhere."""
    r2 = np.sum((grid.points - np.atleast_1d(center)) ** 2, axis=1)
    return np.where(grid.interior, amplitude * np.exp(-r2 / width**2), 0.0)


def cubic_preset(grid: Grid, q=1.0, c3_scale=1.0) -> Nonlinearity:
    """a(x, z) = q z + c2 z^2/2 + c3 z^3/6 with Gaussian c2, c3 and validity radius 1.

    d_z a >= q - 0.8 on |z| <= 1, so the mass-sign condition holds for q >= 0.8.
    """
    center = np.zeros(grid.dim)
    center[0] = 0.2
    c2 = gaussian_field(grid, 0.8, center, 0.35 if grid.dim == 1 else 0.5)
    c3 = gaussian_field(grid, 1.5 * c3_scale, -center * 1.5, 0.4 if grid.dim == 1 else 0.5)
    c1 = np.where(grid.interior, q, 0.0)
    return Nonlinearity(grid, np.stack([c1, c2, c3]), radius=1.0)
