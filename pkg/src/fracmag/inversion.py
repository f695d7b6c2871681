"""Recovery of the Taylor coefficients c_k, k >= 2, from amplitude derivatives of DN data.

For test fields v solving the linear equation in omega, the k-th DN
derivative reduces to an integral over omega:

    D^(k)[f, v] = int c_k (u1_f)^k v + int R_{k-1} v,

where u1_f is the linear solution with data f and R_{k-1} collects the
lower-order Bell terms. Stacking these identities over data f_i and Runge
tests v_m gives a linear least-squares problem for c_k on omega nodes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dn_map import DnData, ExteriorBasis
from .errors import IllConditionedWarning, PositivityFailure, SpecViolation
from .forward import ForwardModel, cascade_source, solve_cascade
from .grid import Grid, bump
from .potentials import gauge_equivalent

COND_WARN = 1e12


@dataclass(eq=False)
class RungeSolution:
    target: np.ndarray
    coefficients: np.ndarray
    field: np.ndarray
    misfit: float
    lam_reg: float


def basis_solutions(model: ForwardModel, basis: ExteriorBasis) -> np.ndarray:
    """Linear solutions with each basis function as exterior data, shape (m, N)."""
    return np.stack([model.solve(None, h) for h in basis.fields])


def runge_approximate(
    A, q, target, basis: ExteriorBasis, grid: Grid, s: float, lam_reg=1e-8, model=None, solutions=None, scaled=True
) -> RungeSolution:
    """Tikhonov fit of ``target`` on omega by linear solutions with data in the basis window.

    ``lam_reg`` is relative to the mean Gram diagonal when ``scaled``.
    """
    if len(basis) == 0:
        raise SpecViolation("empty exterior basis")
    model = ForwardModel(grid, s, A, q) if model is None else model
    V = basis_solutions(model, basis) if solutions is None else solutions
    inner = grid.interior_index
    sw = np.sqrt(grid.weights[inner])
    B = (V[:, inner] * sw).T
    t = np.asarray(target, dtype=float)[inner] * sw
    gram = B.T @ B
    if np.linalg.cond(gram) > COND_WARN:
        warnings.warn("Runge Gram matrix condition exceeds 1e12", IllConditionedWarning, stacklevel=2)
    lam = lam_reg * np.trace(gram) / len(gram) if scaled else lam_reg
    alpha = _tikhonov(B, t, lam)
    fit = alpha @ V
    misfit = float(np.linalg.norm(B @ alpha - t) / max(np.linalg.norm(t), np.finfo(float).tiny))
    return RungeSolution(np.asarray(target, dtype=float), alpha, fit, misfit, lam)


def runge_misfit_profile(A, q, target, basis: ExteriorBasis, grid: Grid, s: float, model=None, solutions=None) -> np.ndarray:
    """Unregularized misfits of ``target`` against the first 1, 2, ... basis solutions.

    Uses one Householder QR so prefixes share orthonormal columns; the
    profile is nonincreasing by construction even where the Gram matrix
    is numerically singular.
    """
    model = ForwardModel(grid, s, A, q) if model is None else model
    V = basis_solutions(model, basis) if solutions is None else solutions
    inner = grid.interior_index
    sw = np.sqrt(grid.weights[inner])
    B = (V[:, inner] * sw).T
    t = np.asarray(target, dtype=float)[inner] * sw
    Q, _ = np.linalg.qr(B)
    norm2 = float(t @ t)
    captured = np.cumsum((Q.T @ t) ** 2)
    return np.sqrt(np.clip(norm2 - captured, 0.0, None) / max(norm2, np.finfo(float).tiny))


def _tikhonov(B, t, lam, L=None):
    """argmin ||B x - t||^2 + lam ||L x||^2 via an augmented least-squares system."""
    n = B.shape[1]
    L = np.eye(n) if L is None else L
    aug = np.vstack([B, np.sqrt(lam) * L])
    rhs = np.concatenate([t, np.zeros(L.shape[0])])
    return np.linalg.lstsq(aug, rhs, rcond=None)[0]


# --- first-order verification -------------------------------------------------


@dataclass
class FirstOrderReport:
    gauge_equivalent: bool
    dn_gap: float
    tol: float

    @property
    def consistent(self):
        """Gauge-equivalent pairs must match; others must be separated by 10 tol."""
        if self.gauge_equivalent:
            return self.dn_gap <= self.tol
        return self.dn_gap > 10 * self.tol


def linear_dn_matrix(A, q, basis1, basis2, grid, s, model=None):
    from .dn_map import pairing_matrix

    model = ForwardModel(grid, s, A, q) if model is None else model
    return pairing_matrix(model, basis_solutions(model, basis1), basis2.fields)


def verify_first_order(A1, q1, A2, q2, basis1, basis2, grid, s, tol=1e-6) -> FirstOrderReport:
    """Compare linear DN matrices of two pairs; the gap is relative to max |D1|."""
    D1 = linear_dn_matrix(A1, q1, basis1, basis2, grid, s)
    D2 = linear_dn_matrix(A2, q2, basis1, basis2, grid, s)
    gap = float(np.max(np.abs(D1 - D2)) / max(np.max(np.abs(D1)), np.finfo(float).tiny))
    equivalent = gauge_equivalent((A1, q1), (A2, q2), grid, s)
    return FirstOrderReport(equivalent, gap, tol)


# --- higher-order reconstruction ------------------------------------------------


@dataclass(frozen=True)
class InversionOptions:
    lam_runge: float = 1e-10
    lam_coeff: float = 1e-6
    theta: float = 0.05
    n_targets: int = 16
    target_radius: float | None = None
    smoothing: str = "gradient"
    max_dual_gap: float = 0.05
    max_runge_misfit: float = 0.99


@dataclass(eq=False)
class CoefficientEstimate:
    k: int
    values: np.ndarray
    mask: np.ndarray
    runge_misfit: float
    positivity_margin: float
    residual: float


def omega_targets(grid: Grid, count: int, radius=None) -> np.ndarray:
    """Bumps with centres spread over omega, restricted to omega nodes."""
    omega = grid.spec.omega
    half = (omega.hi - omega.lo) / 2
    if omega.kind == "ball":
        half = half / np.sqrt(grid.dim)
    per_axis = count if grid.dim == 1 else int(np.ceil(np.sqrt(count)))
    radius = float(2.5 * np.min(half) / per_axis) if radius is None else radius
    axes = [np.linspace(omega.center[d] - half[d], omega.center[d] + half[d], per_axis) for d in range(grid.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)[:count]
    out = []
    for c in centers:
        r = min(radius, float(np.min(np.minimum(c - grid.spec.box_lo, np.asarray(grid.spec.box_hi) - c))))
        out.append(np.where(grid.interior, bump(grid, c, r), 0.0))
    return np.stack(out)


def _difference_operator(grid: Grid, nodes):
    """Forward differences between neighbouring omega nodes (rows), scaled by 1/h."""
    pos = {tuple(np.round(grid.points[i] / grid.h, 6)): r for r, i in enumerate(nodes)}
    rows = []
    for r, i in enumerate(nodes):
        key = np.round(grid.points[i] / grid.h, 6)
        for d in range(grid.dim):
            nb = key.copy()
            nb[d] += 1
            j = pos.get(tuple(nb))
            if j is not None:
                row = np.zeros(len(nodes))
                row[r], row[j] = -1.0, 1.0
                rows.append(row)
    return np.array(rows) / grid.h


def _positivity(grid, u1s):
    inner = grid.interior
    margins = [float(u[inner].min()) for u in u1s]
    if min(margins) <= 0:
        raise PositivityFailure(f"linear solution is not positive on omega (min {min(margins):.3g})")
    return min(margins)


def reconstruct_coefficient(
    D: np.ndarray,
    k: int,
    known: dict,
    A,
    q,
    data: ExteriorBasis,
    basis2: ExteriorBasis,
    grid: Grid,
    s: float,
    opts: InversionOptions | None = None,
    model=None,
) -> CoefficientEstimate:
    """Estimate c_k on omega from the k-th DN derivative matrix ``D`` (data x tests).

    ``known`` maps m = 2..k-1 to previously recovered c_m. Nodes where every
    u1 falls below ``theta`` times its maximum are masked (set to zero).
    """
    opts = InversionOptions() if opts is None else opts
    model = ForwardModel(grid, s, A, q) if model is None else model
    if D.shape != (len(data), len(basis2)):
        raise SpecViolation("DN derivative matrix does not match the bases")
    if np.any(data.fields < 0):
        raise PositivityFailure("data functions must be nonnegative")
    inner = grid.interior_index
    w = grid.weights[inner]
    cascades = [solve_cascade(A, None, f, grid, s, k - 1, model=model, coeffs=known) for f in data.fields]
    u1s = [c[0] for c in cascades]
    margin = _positivity(grid, u1s)

    V = basis_solutions(model, basis2)
    targets = omega_targets(grid, opts.n_targets, opts.target_radius)
    runs = [runge_approximate(A, q, t, basis2, grid, s, opts.lam_runge, model, V) for t in targets]
    alphas = np.stack([r.coefficients for r in runs])
    vs = np.stack([r.field for r in runs])[:, inner]

    rows, rhs = [], []
    for i, us in enumerate(cascades):
        u1 = us[0][inner]
        remainder = cascade_source(None, us, k, known)[inner] if k > 2 else 0.0
        for m in range(len(runs)):
            rows.append(w * u1**k * vs[m])
            rhs.append(alphas[m] @ D[i] - np.sum(w * remainder * vs[m]))
    G, b = np.array(rows), np.array(rhs)

    peak = np.max(np.stack([u[inner] for u in u1s]), axis=0)
    keep = peak >= opts.theta * peak.max()
    if opts.smoothing == "gradient":
        L = _difference_operator(grid, inner)
        L = np.vstack([L, np.eye(len(inner)) * 1e-3])
    else:
        L = np.eye(len(inner))
    col = np.linalg.norm(G, axis=0)
    lam = opts.lam_coeff * np.sum(col**2) / np.trace(L.T @ L)
    c = _tikhonov(G, b, lam, L)
    values = np.zeros(grid.n_nodes)
    values[inner] = np.where(keep, c, 0.0)
    mask = np.zeros(grid.n_nodes, dtype=bool)
    mask[inner] = keep
    misfit = float(max(r.misfit for r in runs))
    residual = float(np.linalg.norm(G @ c - b) / max(np.linalg.norm(b), np.finfo(float).tiny))
    return CoefficientEstimate(k, values, mask, misfit, margin, residual)


@dataclass(eq=False)
class ReconstructionResult:
    estimates: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    u1: np.ndarray | None = None
    positivity_margin: float = float("nan")
    complete: bool = True
    stopped_at: int | None = None
    reason: str = ""


def relative_l2_error(estimate: CoefficientEstimate, truth, grid: Grid) -> float:
    m = estimate.mask
    w = grid.weights[m]
    diff = np.sqrt(np.sum(w * (estimate.values[m] - truth[m]) ** 2))
    ref = np.sqrt(np.sum(w * truth[m] ** 2))
    return float(diff / ref) if ref > 0 else float(diff)


def reconstruct_all(
    dn: DnData, A, q, data: ExteriorBasis, basis2: ExteriorBasis, grid: Grid, s: float, K=None, opts=None, truth=None
) -> ReconstructionResult:
    """Recover c_2..c_K in order, feeding each estimate into the next remainder.

    Stops early, flagging a partial result, when the dual-mode DN gap or the
    Runge misfit of an order exceeds its configured limit.
    """
    opts = InversionOptions() if opts is None else opts
    K = dn.order if K is None else K
    model = ForwardModel(grid, s, A, q)
    result = ReconstructionResult()
    known = {}
    for k in range(2, K + 1):
        gap = dn.dual_mode_gap(k)
        if np.isfinite(gap) and gap > opts.max_dual_gap:
            result.complete, result.stopped_at = False, k
            result.reason = f"dual-mode DN gap {gap:.3g} at order {k}"
            break
        est = reconstruct_coefficient(dn.derivative(k), k, known, A, q, data, basis2, grid, s, opts, model)
        if est.runge_misfit > opts.max_runge_misfit:
            result.complete, result.stopped_at = False, k
            result.reason = f"Runge misfit {est.runge_misfit:.3g} at order {k}"
            break
        result.estimates[k] = est
        result.positivity_margin = est.positivity_margin
        known[k] = est.values
        if truth is not None and k in truth:
            result.errors[k] = relative_l2_error(est, truth[k], grid)
    result.u1 = model.solve(None, data.fields[0])
    return result
