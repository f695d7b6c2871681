"""Discrete fractional gradient, divergence, Laplacian and magnetic operator.

All operators are built on one symmetric pair measure ``mu[i, j] = w_i w_j
kappa[i, j]``. ``kappa`` is one except on nearest-neighbour pairs, where it
carries the lattice-zeta correction for the principal-value integral over
the punctured lattice: for smooth ``u`` the punctured Riemann sum misses a
term proportional to ``h**(2 - 2s) * Laplacian(u)``, and that term is
written as extra weight on the 2n nearest neighbours. The correction keeps
every off-diagonal entry of the Laplacian nonpositive.

Functions outside the box are taken to vanish. Pairs (x, y) with y outside
the box are represented by a "far" channel holding ``u(x)``; its weight is
the tail integral ``t(x) = C_{n,s} * int_{R^n \\ box} |x - y|^{-n-2s} dy``.
With these conventions div(grad u) equals the assembled Laplacian up to
rounding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy import integrate
from scipy.special import gamma

from .errors import AccuracyWarning, DomainError, SpecViolation
from .grid import Grid


@dataclass(frozen=True)
class FracConstant:
    n: int
    s: float
    value: float


def frac_constant(n: int, s: float) -> FracConstant:
    """C_{n,s} = 4^s Gamma(n/2 + s) / (pi^{n/2} |Gamma(-s)|)."""
    if not 0.0 < s < 1.0:
        raise DomainError(f"s must lie in (0, 1), got {s}")
    value = 4.0**s * gamma(n / 2 + s) / (np.pi ** (n / 2) * abs(gamma(-s)))
    return FracConstant(int(n), float(s), float(value))


def _check_order(s):
    frac_constant(1, s)
    if not 0.1 <= s <= 0.9:
        warnings.warn(f"s={s} is outside [0.1, 0.9]; quadrature accuracy degrades", AccuracyWarning)


@lru_cache(maxsize=16)
def lattice_zeta(n: int, s: float) -> float:
    """Z_n(n + 2s - 2), where Z_n(a) continues sum over j in Z^n \\ {0} of |j|^{-a}.

    n = 1: 2 zeta(2s - 1).  n = 2: 4 zeta(s) beta(s), beta the Dirichlet beta
    function. Negative for s in (0, 1).
    """
    if n == 1:
        return float(2 * mpmath.zeta(2 * s - 1))
    if n == 2:
        beta = (mpmath.zeta(s, 0.25) - mpmath.zeta(s, 0.75)) / mpmath.power(4, s)
        return float(4 * mpmath.zeta(s) * beta)
    raise DomainError("only n = 1, 2 are supported")


def nearest_neighbour_correction(n: int, s: float, h: float) -> float:
    """Extra kernel weight (already divided by C_{n,s}) on each nearest-neighbour pair."""
    return -lattice_zeta(n, s) / (2 * n) * h ** (-2 * s)


def _ray_to_box(x, direction, lo, hi):
    ts = []
    for d in range(len(x)):
        if direction[d] > 0:
            ts.append((hi[d] - x[d]) / direction[d])
        elif direction[d] < 0:
            ts.append((lo[d] - x[d]) / direction[d])
    return min(ts)


def tail_weight(point, lo, hi, s, constant):
    """C_{n,s} times the integral of |x - y|^{-n-2s} over y outside the box.

    The radial integral is exact, rho^{-2s} / (2s) with rho the distance to the
    box boundary along the ray; the angular integral is adaptive quadrature
    split at the corner directions.
    """
    x = np.asarray(point, dtype=float)
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if len(x) == 1:
        return constant / (2 * s) * ((x[0] - lo[0]) ** (-2 * s) + (hi[0] - x[0]) ** (-2 * s))
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]) - x
    cuts = np.sort(np.mod(np.arctan2(corners[:, 1], corners[:, 0]), 2 * np.pi))
    edges = np.concatenate([[0.0], cuts, [2 * np.pi]])

    def integrand(theta):
        rho = _ray_to_box(x, (np.cos(theta), np.sin(theta)), lo, hi)
        return rho ** (-2 * s) / (2 * s)

    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a > 1e-14:
            total += integrate.quad(integrand, a, b, epsabs=0, epsrel=1e-12, limit=200)[0]
    return constant * total


@dataclass(frozen=True, eq=False)
class PairGeometry:
    """Pair-indexed quantities shared by all operators on one grid and order s."""

    s: float
    constant: float
    diff: np.ndarray  # x_j - x_i, shape (N, N, n)
    dist: np.ndarray  # |x_i - x_j| with ones on the diagonal
    kappa: np.ndarray  # quadrature correction factor
    mu: np.ndarray  # pair measure, zero on the diagonal
    kernel: np.ndarray  # C |x - y|^{-n-2s}, zero on the diagonal
    grad_factor: np.ndarray  # sqrt(C/2) |x - y|^{-n/2-s-1}, zero on the diagonal
    tail: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=4)
def _pair_geometry(spec, nodes_per_axis, s) -> PairGeometry:
    from .grid import build_grid

    grid = build_grid(spec, nodes_per_axis, max_nodes=10**9)
    n, h = grid.dim, grid.h
    const = frac_constant(n, s).value
    x = grid.points
    diff = x[None, :, :] - x[:, None, :]
    dist = np.sqrt(np.sum(diff**2, axis=2))
    np.fill_diagonal(dist, 1.0)
    kernel = const * dist ** (-n - 2 * s)
    np.fill_diagonal(kernel, 0.0)
    grad_factor = np.sqrt(const / 2) * dist ** (-n / 2 - s - 1)
    np.fill_diagonal(grad_factor, 0.0)
    # nearest neighbours: dist == h; the correction is expressed relative to the
    # plain kernel weight h^{-n-2s} w_j = h^{-2s}
    kappa = np.ones_like(dist)
    nn = np.abs(dist - h) < 1e-9 * h
    kappa[nn] += nearest_neighbour_correction(n, s, h) / h ** (-2 * s)
    w = grid.weights
    mu = w[:, None] * w[None, :] * kappa
    np.fill_diagonal(mu, 0.0)
    tail = np.array([tail_weight(p, spec.box_lo, spec.box_hi, s, const) for p in x])
    for arr in (diff, dist, kappa, mu, kernel, grad_factor, tail):
        arr.setflags(write=False)
    return PairGeometry(float(s), const, diff, dist, kappa, mu, kernel, grad_factor, tail, w)


def pair_geometry(grid: Grid, s: float) -> PairGeometry:
    _check_order(s)
    return _pair_geometry(grid.spec, grid.nodes_per_axis, float(s))


def tail_weights(grid: Grid, s: float) -> np.ndarray:
    return pair_geometry(grid, s).tail


@dataclass(frozen=True, eq=False)
class PairVectorField:
    """Vector field on ordered node pairs plus the collapsed far-field channel."""

    values: np.ndarray
    far: np.ndarray | None = None

    def far_or_zero(self):
        if self.far is None:
            return np.zeros(self.values.shape[0])
        return self.far


def _pair_values(P):
    if isinstance(P, PairVectorField):
        return P.values, P.far_or_zero()
    values = np.asarray(P, dtype=float)
    return values, np.zeros(values.shape[0])


def frac_gradient(grid: Grid, s: float, u) -> PairVectorField:
    """sqrt(C/2) (u(x) - u(y)) (y - x) / |y - x|^{n/2+s+1} on all node pairs."""
    geo = pair_geometry(grid, s)
    u = np.asarray(u, dtype=float)
    scal = geo.grad_factor * (u[:, None] - u[None, :])
    return PairVectorField(scal[:, :, None] * geo.diff, u.copy())


def pair_inner(grid: Grid, s: float, P, Q) -> float:
    """Discrete L^2 pairing of two pair fields under the pair measure."""
    geo = pair_geometry(grid, s)
    pv, pf = _pair_values(P)
    qv, qf = _pair_values(Q)
    return float(np.sum(geo.mu * np.einsum("ijk,ijk->ij", pv, qv)) + np.sum(geo.tail * geo.weights * pf * qf))


def frac_divergence(grid: Grid, s: float, P) -> np.ndarray:
    """Adjoint of :func:`frac_gradient` for the node and pair inner products."""
    geo = pair_geometry(grid, s)
    values, far = _pair_values(P)
    S = geo.mu * geo.grad_factor * np.einsum("ijk,ijk->ij", values, geo.diff)
    return (S.sum(axis=1) - S.sum(axis=0)) / geo.weights + geo.tail * far


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense discrete operator: ``matrix[r]`` is the stencil of node ``rows[r]``."""

    matrix: np.ndarray
    rows: np.ndarray
    constant: float
    tail: np.ndarray
    s: float
    kind: str

    def apply(self, u):
        return self.matrix @ np.asarray(u, dtype=float)

    def block(self, columns):
        return self.matrix[:, columns]


def _rows(grid, rows):
    if rows is None:
        return grid.interior_index
    if isinstance(rows, str):
        if rows == "all":
            return np.arange(grid.n_nodes)
        if rows == "interior":
            return grid.interior_index
        raise ValueError(f"unknown row selection {rows!r}")
    rows = np.asarray(rows)
    if rows.dtype == bool:
        return np.flatnonzero(rows)
    return rows.astype(int)


def _laplacian_rows(geo: PairGeometry, rows):
    W = geo.kernel[rows] * geo.kappa[rows] * geo.weights[None, :]
    M = -W
    M[np.arange(len(rows)), rows] = W.sum(axis=1) + geo.tail[rows]
    return M


def assemble_frac_laplacian(grid: Grid, s: float, rows=None) -> OperatorMatrix:
    """Rows of (-Delta)^s for the selected nodes (default: interior nodes)."""
    geo = pair_geometry(grid, s)
    rows = _rows(grid, rows)
    M = _laplacian_rows(geo, rows)
    return OperatorMatrix(M, rows, geo.constant, geo.tail[rows].copy(), geo.s, "fractional")


def drift_coefficients(grid: Grid, s: float, A_values) -> np.ndarray:
    """alpha[i, j] = A(x_i, x_j) . (x_j - x_i) sqrt(C/2) |x_i - x_j|^{-n/2-s-1} kappa_ij w_j.

    Only the antisymmetric part of A survives in the operator; callers pass
    the antisymmetric part.
    """
    geo = pair_geometry(grid, s)
    dot = np.einsum("ijk,ijk->ij", A_values, geo.diff)
    return dot * geo.grad_factor * geo.kappa * geo.weights[None, :]


def assemble_magnetic(grid: Grid, s: float, A, q=None, rows=None) -> OperatorMatrix:
    """(-Delta)^s_A + q as fractional Laplacian + drift + multiplicative mass term."""
    from .potentials import decompose, mass_term

    geo = pair_geometry(grid, s)
    rows = _rows(grid, rows)
    M = _laplacian_rows(geo, rows)
    kind = "fractional"
    if A is not None:
        if not A.support_ok():
            raise SpecViolation("magnetic potential is not supported in omega x omega")
        anti = decompose(A).anti
        alpha = 2.0 * drift_coefficients(grid, s, anti)[rows]
        M -= alpha
        M[np.arange(len(rows)), rows] += alpha.sum(axis=1)
        M[np.arange(len(rows)), rows] += mass_term(A, grid, s)[rows]
        kind = "magnetic"
    if q is not None:
        q = np.asarray(q, dtype=float)
        qq = np.where(grid.interior, q, 0.0) if q.shape[0] == grid.n_nodes else None
        if qq is None:
            raise ValueError("q must be a field over all nodes")
        M[np.arange(len(rows)), rows] += qq[rows]
        kind = "magnetic+q"
    return OperatorMatrix(M, rows, geo.constant, geo.tail[rows].copy(), geo.s, kind)


def magnetic_gradient(grid: Grid, s: float, A, u) -> PairVectorField:
    """grad^s u + A(x, y) u(x)."""
    G = frac_gradient(grid, s, u)
    if A is None:
        return G
    u = np.asarray(u, dtype=float)
    return PairVectorField(G.values + A.values * u[:, None, None], G.far)


def bilinear_energy(grid: Grid, s: float, A, u, v) -> float:
    """<grad^s_A u, grad^s_A v> under the pair measure, far channel included."""
    return pair_inner(grid, s, magnetic_gradient(grid, s, A, u), magnetic_gradient(grid, s, A, v))
