"""Exterior-value problems for the magnetic fractional Schrodinger operator.

The interior block of the assembled operator is factorized once per
``(grid, s, A, q)`` and reused by every linear solve, Picard step and
cascade order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from math import comb, gamma, pi

import numpy as np
from scipy import integrate, linalg

from .errors import (
    BarrierFailure,
    ContractionFailure,
    NumericalFailure,
    RadiusExceeded,
    SingularSystem,
    SpecViolation,
)
from .grid import Grid, bump, cutoff_eta
from .nonlocal_ops import assemble_magnetic, frac_constant
from .potentials import (
    MagneticPotential,
    Nonlinearity,
    antisymmetric_radial_potential,
    check_admissibility,
    eval_a,
    mass_term,
    separable_bump_potential,
)

RCOND_MIN = 1e-13


@dataclass(frozen=True)
class SolverOptions:
    tol_linear: float = 1e-9
    tol_picard: float = 1e-13
    max_picard_iters: int = 200
    delta: float = 0.5
    eps0: float = 0.5
    damping: float = 1.0

    def __post_init__(self):
        for name in ("tol_linear", "tol_picard", "max_picard_iters", "delta", "eps0", "damping"):
            if not getattr(self, name) > 0:
                raise SpecViolation(f"solver option {name} must be positive")
        if self.delta >= 1:
            raise SpecViolation("the contraction ball radius delta must be below 1")
        if self.damping > 1:
            raise SpecViolation("damping must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class LinearProblem:
    """(-Delta)^s_A u + q u = F in omega, u = g outside omega."""

    A: MagneticPotential | None
    q: np.ndarray
    F: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.F)):
            raise SpecViolation("source F is not finite")


@dataclass
class Solution:
    u: np.ndarray
    residual_inf: float
    iterations: int | None = None
    contraction_estimate: float | None = None
    history: list = field(default_factory=list)


class ForwardModel:
    """Assembled operator and interior factorization for fixed (grid, s, A, q)."""

    def __init__(self, grid: Grid, s: float, A=None, q=None):
        self.grid, self.s, self.A = grid, s, A
        self.q = grid.zeros() if q is None else np.where(grid.interior, np.asarray(q, dtype=float), 0.0)
        self.op = assemble_magnetic(grid, s, A, self.q, rows="all")
        self.M = self.op.matrix
        inner, outer = grid.interior_index, grid.exterior_index
        self.M_int = self.M[np.ix_(inner, inner)]
        self.M_ext = self.M[np.ix_(inner, outer)]
        self._lu = linalg.lu_factor(self.M_int, check_finite=True)
        anorm = np.linalg.norm(self.M_int, 1)
        rcond, _ = linalg.lapack.dgecon(self._lu[0], anorm, norm="1")
        self.rcond = float(rcond)
        if not self.rcond > RCOND_MIN:
            raise SingularSystem(f"interior block is numerically singular (rcond {self.rcond:.2e})")
        self.norm_inf = float(np.max(np.sum(np.abs(self.M_int), axis=1)))

    @property
    def sigma(self):
        """m_A + q on all nodes."""
        return mass_term(self.A, self.grid, self.s) + self.q

    def interior_residual(self, u, F):
        r = self.M[self.grid.interior_index] @ u - np.asarray(F)[self.grid.interior_index]
        return float(np.max(np.abs(r))) if r.size else 0.0

    def solve(self, F=None, g=None):
        """Direct solve; returns u on all nodes with u = g outside omega."""
        grid = self.grid
        u = grid.zeros()
        rhs = np.zeros(len(grid.interior_index))
        if g is not None:
            g = np.asarray(g, dtype=float)
            u[grid.exterior_index] = g[grid.exterior_index]
            rhs -= self.M_ext @ g[grid.exterior_index]
        if F is not None:
            rhs += np.asarray(F, dtype=float)[grid.interior_index]
        u[grid.interior_index] = linalg.lu_solve(self._lu, rhs)
        return u

    def apply(self, u):
        return self.M @ u


def _check_exterior(grid, g):
    g = np.asarray(g, dtype=float)
    if g.shape != (grid.n_nodes,):
        raise ValueError("exterior data must be a field over all nodes")
    if np.any(g[grid.interior] != 0):
        raise SpecViolation("exterior data must vanish on omega nodes")
    return g


def solve_linear(p: LinearProblem, grid: Grid, s: float, opts: SolverOptions | None = None, model=None) -> Solution:
    opts = SolverOptions() if opts is None else opts
    g = _check_exterior(grid, p.g)
    model = ForwardModel(grid, s, p.A, p.q) if model is None else model
    sigma = model.sigma[grid.interior]
    if sigma.size and sigma.min() < -opts.tol_linear:
        warnings.warn(f"m_A + q reaches {sigma.min():.3g} < 0; coercivity is not guaranteed", stacklevel=2)
    u = model.solve(p.F, g)
    res = model.interior_residual(u, p.F)
    scale = max(1.0, float(np.max(np.abs(u))) * model.norm_inf)
    if res > opts.tol_linear * scale:
        raise NumericalFailure(f"linear residual {res:.3e} exceeds tolerance")
    return Solution(u, res)


# --- barrier and bounds ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Barrier:
    phi: np.ndarray
    lam: float
    R: float
    eta: np.ndarray
    achieved: float

    @property
    def C(self):
        return 1.0 / self.lam


def sphere_area(n):
    return 2 * pi ** (n / 2) / gamma(n / 2)


def barrier_lambda(n: int, s: float, R: float) -> float:
    """(C_{n,s}/2) * integral over |z| > R of (R + |z|)^{-n-2s} dz."""
    radial, _ = integrate.quad(lambda r: (R + r) ** (-n - 2 * s) * r ** (n - 1), R, np.inf, epsabs=0, epsrel=1e-12)
    return frac_constant(n, s).value / 2 * sphere_area(n) * radial


def build_barrier(grid: Grid, s: float, A=None, q=None, spec=None, tol=0.05, model=None) -> Barrier:
    """phi = eta / lambda with eta a smooth radial cutoff equal to 1 on omega."""
    from .grid import barrier_radius

    R = barrier_radius(grid, spec)
    eta = cutoff_eta(grid, spec, R)
    lam = barrier_lambda(grid.dim, s, R)
    phi = eta / lam
    M = model.M if model is not None else assemble_magnetic(grid, s, A, q, rows="all").matrix
    achieved = float(np.min((M @ phi)[grid.interior]))
    if achieved < 1.0 - tol:
        raise BarrierFailure(f"min over omega of M phi is {achieved:.4f} < {1 - tol:.2f}")
    return Barrier(phi, lam, R, eta, achieved)


@dataclass
class BoundReport:
    norm_u: float
    bound: float
    margin: float
    passed: bool


def linf_bound_check(sol: Solution, p: LinearProblem, barrier: Barrier, grid: Grid | None = None, tol=1e-6) -> BoundReport:
    """||u||_inf <= ||g||_inf + C ||F||_inf(omega), with C = 1/lambda."""
    u = np.asarray(sol.u)
    norm_g = float(np.max(np.abs(p.g)))
    F = np.asarray(p.F, dtype=float)
    if grid is not None:
        F = F[grid.interior]
    norm_F = float(np.max(np.abs(F))) if F.size else 0.0
    bound = norm_g + barrier.C * norm_F
    norm_u = float(np.max(np.abs(u)))
    return BoundReport(norm_u, bound, bound - norm_u, norm_u <= bound + tol)


# --- semilinear problem ------------------------------------------------------


def _noise_floor(*fields):
    return 64 * np.finfo(float).eps * max(1.0, *(float(np.max(np.abs(f))) for f in fields))


def solve_nonlinear(
    A,
    a: Nonlinearity,
    g,
    grid: Grid,
    s: float,
    opts: SolverOptions | None = None,
    v0=None,
    model: ForwardModel | None = None,
) -> Solution:
    """Picard iteration v <- L^{-1}[-(a(u0 + v) - c1 (u0 + v))] around the linear solution u0.

    L = (-Delta)^s_A + c1. Raises ContractionFailure when successive
    differences grow for three consecutive steps or the iteration budget
    runs out; RadiusExceeded when |u| leaves the validity radius.
    """
    opts = SolverOptions() if opts is None else opts
    g = _check_exterior(grid, g)
    amplitude = float(np.max(np.abs(g)))
    if amplitude > opts.eps0 * (1 + 1e-12):
        raise SpecViolation(f"|g| = {amplitude:.3g} exceeds the data amplitude limit {opts.eps0:.3g}")
    model = ForwardModel(grid, s, A, a.q) if model is None else model
    u0 = model.solve(None, g)
    c1 = a.q
    v = grid.zeros() if v0 is None else np.where(grid.interior, np.asarray(v0, dtype=float), 0.0)

    def picard(v):
        w = u0 + v
        with np.errstate(over="ignore", invalid="ignore"):
            src = -(eval_a(a, w) - c1 * w)
        if not np.all(np.isfinite(src)):
            raise ContractionFailure(
                f"Picard iterates overflowed at amplitude {amplitude:.3g}", suggested_amplitude=suggested
            )
        return model.solve(src, None)

    history, ratios = [], []
    growing = 0
    suggested = amplitude / 2
    for it in range(1, opts.max_picard_iters + 1):
        try:
            new = picard(v)
        except RadiusExceeded as exc:
            raise RadiusExceeded(str(exc), suggested_amplitude=suggested) from exc
        if opts.damping < 1:
            new = (1 - opts.damping) * v + opts.damping * new
        diff = float(np.max(np.abs(new - v)))
        floor = _noise_floor(u0, new)
        if history and history[-1] > 1e3 * floor:
            ratio = diff / history[-1]
            ratios.append(ratio)
            growing = growing + 1 if ratio >= 1 else 0
            if growing >= 3:
                raise ContractionFailure(
                    f"Picard differences grew for 3 consecutive steps at amplitude {amplitude:.3g}",
                    suggested_amplitude=suggested,
                )
        history.append(diff)
        v = new
        if diff <= max(opts.tol_picard, floor):
            break
    else:
        raise ContractionFailure(
            f"no convergence in {opts.max_picard_iters} Picard steps at amplitude {amplitude:.3g}",
            suggested_amplitude=suggested,
        )
    u = u0 + v
    try:
        eval_a(a, u)  # radius check on the limit
    except RadiusExceeded as exc:
        raise RadiusExceeded(str(exc), suggested_amplitude=suggested) from exc
    residual = nonlinear_residual(model, a, u)
    factor = max(ratios) if ratios else 0.0
    return Solution(u, residual, it, factor, history)


def nonlinear_residual(model: ForwardModel, a: Nonlinearity, u) -> float:
    """max over omega of |(L u)_i + a(x_i, u_i) - c1 u_i|."""
    grid = model.grid
    r = model.apply(u) + eval_a(a, u) - a.q * u
    return float(np.max(np.abs(r[grid.interior])))


def solve_nonlinear_adaptive(A, a, g_shape, amplitude, grid, s, opts=None, model=None, max_halvings=20):
    """Halve the data amplitude until the Picard iteration converges.

    Returns (solution, amplitude actually used).
    """
    opts = SolverOptions() if opts is None else opts
    model = ForwardModel(grid, s, A, a.q) if model is None else model
    for _ in range(max_halvings + 1):
        try:
            g = amplitude * np.asarray(g_shape, dtype=float)
            local = replace(opts, eps0=max(opts.eps0, float(np.max(np.abs(g)))))
            return solve_nonlinear(A, a, g, grid, s, local, model=model), amplitude
        except ContractionFailure:
            amplitude /= 2
    raise ContractionFailure("no convergent amplitude found", suggested_amplitude=amplitude)


# --- linearization cascade ---------------------------------------------------


def partial_bell(n: int, k: int, xs, cache=None):
    """Partial Bell polynomial B_{n,k}(x_1, ..., x_{n-k+1}).

    ``xs[i]`` holds x_{i+1}; entries may be arrays. Uses the recurrence
    B_{n,k} = sum_{i=1}^{n-k+1} C(n-1, i-1) x_i B_{n-i,k-1}.
    """
    cache = {} if cache is None else cache
    if (n, k) in cache:
        return cache[(n, k)]
    if n == 0 and k == 0:
        out = 1.0
    elif n == 0 or k == 0:
        out = 0.0
    else:
        out = 0.0
        for i in range(1, n - k + 2):
            out = out + comb(n - 1, i - 1) * xs[i - 1] * partial_bell(n - i, k - 1, xs, cache)
    cache[(n, k)] = out
    return out


def cascade_source(a: Nonlinearity, us, k: int, coeffs=None):
    """sum_{m=2}^{k} c_m B_{k,m}(u1, ..., u_{k-m+1}): the non-operator part of the k-th equation.

    ``coeffs`` maps m to a field and overrides ``a`` for those orders.
    """
    cache = {}
    coeffs = {} if coeffs is None else coeffs
    total = np.zeros_like(us[0])
    for m in range(2, k + 1):
        c = coeffs.get(m, a.coefficient(m) if a is not None else None)
        if c is None:
            continue
        total = total + c * partial_bell(k, m, us, cache)
    return total


def solve_cascade(A, a: Nonlinearity, f, grid: Grid, s: float, K: int, opts=None, model=None, coeffs=None):
    """Fields u^(1..K): k-th derivatives in eps of the solution with data eps*f, at eps = 0."""
    if coeffs is None and K > a.order:
        raise SpecViolation(f"cascade order {K} exceeds the truncation order {a.order}")
    f = _check_exterior(grid, f)
    model = ForwardModel(grid, s, A, a.q) if model is None else model
    us = [model.solve(None, f)]
    for k in range(2, K + 1):
        src = -cascade_source(a, us, k, coeffs)
        us.append(model.solve(src, None))
    return us


# --- property checks ---------------------------------------------------------


@dataclass
class InstanceResult:
    admissible: bool
    min_u: float
    scale: float
    weak_ok: bool
    strict: bool
    core_min: float
    collar_min: float
    strong_ok: bool


@dataclass
class MaximumPrincipleReport:
    results: list

    @property
    def checked(self):
        return [r for r in self.results if r.admissible]

    @property
    def outside_hypothesis(self):
        return sum(not r.admissible for r in self.results)

    @property
    def weak_violations(self):
        return sum(not r.weak_ok for r in self.checked)

    @property
    def strong_violations(self):
        return sum(r.strict and not r.strong_ok for r in self.checked)

    @property
    def collar_dips(self):
        """Strict-positivity failures confined to nodes within two cells of the boundary."""
        return sum(r.strict and r.strong_ok and r.collar_min <= 0 for r in self.checked)


@dataclass(frozen=True, eq=False)
class Instance:
    A: MagneticPotential
    q: np.ndarray
    F: np.ndarray
    g: np.ndarray


def _random_point(rng, region):
    if region.kind == "ball":
        while True:
            p = rng.uniform(-1, 1, region.dim)
            if p @ p < 1:
                return np.asarray(region.center) + region.size[0] * p
    return rng.uniform(region.lo, region.hi)


def _random_bumps(grid, region, rng, count, mask):
    out = grid.zeros()
    for _ in range(count):
        radius = rng.uniform(0.15, 0.5) * min(float(np.min(region.hi - region.lo)) / 2, 1.0)
        center = _random_point(rng, region)
        room = float(np.min(np.minimum(center - grid.spec.box_lo, np.asarray(grid.spec.box_hi) - center)))
        radius = min(max(radius, 1.5 * grid.h), room)
        out += rng.uniform(0.2, 1.0) * bump(grid, center, radius)
    return np.where(mask, out, 0.0)


def random_instance(grid: Grid, s: float, rng, positive_data=False, flip_drift=False) -> Instance:
    """Random (A, q, F >= 0, g >= 0) satisfying the drift- and mass-sign conditions.

    ``positive_data`` forces g to be nonzero. ``flip_drift`` negates the
    antisymmetric part so that the drift-sign condition fails.
    """
    spec = grid.spec
    strength = rng.uniform(0.0, 1.0)
    A = antisymmetric_radial_potential(grid, -strength if flip_drift else strength)
    A = A + separable_bump_potential(grid, rng.uniform(-0.5, 0.5, grid.dim))
    m_A = mass_term(A, grid, s)
    q = np.maximum(0.0, -m_A) + rng.uniform(0.0, 1.0) * rng.integers(0, 2)
    q = np.where(grid.interior, q, 0.0)
    F = _random_bumps(grid, spec.omega, rng, rng.integers(0, 3), grid.interior)
    window_mask = grid.in_w1 | grid.in_w2
    n_g = rng.integers(1, 3) if positive_data else rng.integers(0, 3)
    g = np.zeros(grid.n_nodes)
    for _ in range(n_g):
        win, mask = (spec.w1, grid.in_w1) if rng.random() < 0.5 else (spec.w2, grid.in_w2)
        g += _random_bumps(grid, win, rng, 1, mask)
    g = np.where(window_mask, g, 0.0)
    return Instance(A, q, F, g)


def check_instance(grid: Grid, s: float, inst: Instance, opts=None, tol=1e-8, model=None, u=None) -> InstanceResult:
    """``model`` and ``u`` may be passed in when the caller already solved the instance."""
    a = Nonlinearity.linear(grid, inst.q, radius=np.inf)
    report = check_admissibility(inst.A, a, grid, s)
    model = ForwardModel(grid, s, inst.A, inst.q) if model is None else model
    u = model.solve(inst.F, inst.g) if u is None else u
    inner = grid.interior
    scale = max(float(np.max(inst.F)), float(np.max(inst.g)), 1e-300)
    min_u = float(u[inner].min())
    core = grid.core(2)
    collar = inner & ~core
    strict = bool(np.any(inst.g > 0))
    core_min = float(u[core].min()) if core.any() else np.inf
    collar_min = float(u[collar].min()) if collar.any() else np.inf
    return InstanceResult(
        admissible=report.passed,
        min_u=min_u,
        scale=scale,
        weak_ok=min_u >= -tol * scale,
        strict=strict,
        core_min=core_min,
        collar_min=collar_min,
        strong_ok=core_min > 0,
    )


def check_maximum_principle(grid: Grid, s: float, instances, opts=None) -> MaximumPrincipleReport:
    """Weak principle (F, g >= 0 gives u >= 0) and, for g nonzero, strict positivity on the core."""
    return MaximumPrincipleReport([check_instance(grid, s, inst, opts) for inst in instances])


def energy_ratio(grid, s, A, a, g, opts=None, model=None):
    """B[u, u]^{1/2} / B[g, g]^{1/2} for the semilinear solution u with data g.

    B includes the nonlinear term int a(x, u) u; g is extended by zero.
    """
    from .nonlocal_ops import bilinear_energy

    sol = solve_nonlinear(A, a, g, grid, s, opts, model=model)
    u = sol.u
    w = grid.weights
    e_u = bilinear_energy(grid, s, A, u, u) + float(np.sum((eval_a(a, u) * u * w)[grid.interior]))
    e_g = bilinear_energy(grid, s, A, g, g)
    return np.sqrt(max(e_u, 0.0) / e_g)
