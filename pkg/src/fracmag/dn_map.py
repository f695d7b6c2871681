"""DN pairings over exterior bump bases and their derivatives in the data amplitude."""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from math import ceil, factorial

import numpy as np

from .errors import BasisMismatch, SpecViolation, StencilTooCoarse
from .forward import ForwardModel, SolverOptions, cascade_source, solve_cascade, solve_nonlinear
from .grid import Grid, Region, bump
from .potentials import Nonlinearity, eval_a

FORMAT_TAG = "fracmag-dndata 1"
GAP_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class ExteriorBasis:
    window: str
    centers: np.ndarray
    radius: float
    fields: np.ndarray = field(repr=False)

    def __len__(self):
        return self.fields.shape[0]

    def describe(self):
        return {"window": self.window, "centers": self.centers.tolist(), "radius": self.radius}


def _window(grid: Grid, name: str) -> tuple[Region, np.ndarray]:
    if name == "w1":
        return grid.spec.w1, grid.in_w1
    if name == "w2":
        return grid.spec.w2, grid.in_w2
    raise ValueError(f"unknown window {name!r}")


def _lattice(lo, hi, count, dim):
    per_axis = count if dim == 1 else ceil(np.sqrt(count))
    axes = [np.linspace(lo[d], hi[d], per_axis) if per_axis > 1 else np.array([(lo[d] + hi[d]) / 2]) for d in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)[:count]


def make_basis(grid: Grid, window: str, count: int, radius: float | None = None) -> ExteriorBasis:
    """``count`` bumps with centres spread over the window, supports strictly inside it."""
    region, mask = _window(grid, window)
    if count < 1:
        raise SpecViolation("a basis needs at least one function")
    half = (region.hi - region.lo) / 2
    if region.kind == "ball":
        half = half / np.sqrt(region.dim)
    if radius is None:
        radius = float(np.min(half)) / 2
    margin = 1e-9 + radius
    lo = np.asarray(region.center) - half + margin
    hi = np.asarray(region.center) + half - margin
    if np.any(lo > hi):
        raise SpecViolation(f"bumps of radius {radius:.3g} do not fit in {window}")
    centers = _lattice(lo, hi, count, grid.dim)
    fields = np.stack([np.where(mask, bump(grid, c, radius), 0.0) for c in centers])
    for c in centers:
        if region.depth(c[None, :])[0] < radius:
            raise SpecViolation(f"bump support leaves {window}")
    if np.linalg.matrix_rank(fields[:, mask]) < count:
        raise SpecViolation(f"basis functions on {window} are linearly dependent at this resolution")
    fields.setflags(write=False)
    return ExteriorBasis(window, centers, float(radius), fields)


def dn_pairing(A, a: Nonlinearity, g, v_ext, grid: Grid, s: float, opts=None, extension=None, model=None, u=None) -> float:
    """B[u_g, v] with v = v_ext outside omega and ``extension`` (default 0) on omega."""
    v_ext = np.asarray(v_ext, dtype=float)
    if np.any(v_ext[grid.interior] != 0):
        raise SpecViolation("exterior test function must vanish on omega")
    model = ForwardModel(grid, s, A, a.q) if model is None else model
    if u is None:
        u = solve_nonlinear(A, a, g, grid, s, opts, model=model).u
    v = v_ext.copy()
    if extension is not None:
        v[grid.interior] = np.asarray(extension, dtype=float)[grid.interior]
    return _pairing(model, a, u, v)


def _pairing(model, a, u, v):
    grid = model.grid
    w = grid.weights
    Mu = model.apply(u)
    extra = np.where(grid.interior, eval_a(a, u) - a.q * u, 0.0)
    return float(np.sum(v * w * (Mu + extra)))


def pairing_matrix(model: ForwardModel, us, tests) -> np.ndarray:
    """Exterior-trace pairing of each field in ``us`` with each test in ``tests``.

    Valid when the tests vanish on omega: only exterior rows enter.
    """
    grid = model.grid
    outer = grid.exterior_index
    Mu = np.asarray(us) @ model.M[outer].T
    return Mu @ (np.asarray(tests)[:, outer] * grid.weights[outer]).T


@dataclass(frozen=True)
class StencilScheme:
    """Central amplitude stencil ``offsets * step``; ``sub`` offsets give the error estimate."""

    step: float
    offsets: tuple = (-3, -2, -1, 0, 1, 2, 3)
    sub: tuple = (-2, -1, 0, 1, 2)

    @classmethod
    def default(cls, eps0):
        return cls(eps0 / 8)

    @property
    def eps(self):
        return self.step * np.asarray(self.offsets, dtype=float)

    def weights(self, k, offsets=None):
        return fd_weights(np.asarray(self.offsets if offsets is None else offsets, dtype=float), k) / self.step**k

    def describe(self):
        return {"step": self.step, "offsets": list(self.offsets), "sub": list(self.sub)}


def fd_weights(nodes, k):
    """Weights w with sum_p w_p f(nodes_p) = f^(k)(0) for polynomials of degree < len(nodes)."""
    nodes = np.asarray(nodes, dtype=float)
    m = len(nodes)
    if k >= m:
        raise ValueError(f"{m} nodes cannot resolve derivative order {k}")
    V = np.vander(nodes, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[k] = factorial(k)
    return np.linalg.solve(V, rhs)


def second_order_stencil(k):
    """Smallest central stencil of accuracy order 2 for the k-th derivative."""
    p = (k + 1) // 2
    return tuple(range(-p, p + 1))


@dataclass(eq=False)
class DnData:
    eps: np.ndarray
    pairings: np.ndarray  # (n1, n2, n_eps)
    measured: np.ndarray  # (K, n1, n2)
    direct: np.ndarray | None  # (K, n1, n2)
    error: np.ndarray  # (K,) estimated FD error, Frobenius norm
    metadata: dict

    @property
    def order(self):
        return self.measured.shape[0]

    def derivative(self, k, mode="measured"):
        data = self.measured if mode == "measured" else self.direct
        if data is None:
            raise ValueError(f"no {mode} derivatives stored")
        return data[k - 1]

    def substencil(self, k):
        """k-th derivative from the lower-order sub-stencil; its gap to ``derivative(k)`` is the FD noise estimate."""
        st = self.metadata["stencil"]
        scheme = StencilScheme(st["step"], tuple(st["offsets"]), tuple(st["sub"]))
        idx = [scheme.offsets.index(o) for o in scheme.sub]
        return self.pairings[:, :, idx] @ scheme.weights(k, scheme.sub)

    def dual_mode_gap(self, k):
        """Relative gap between the modes; orders with vanishing direct values are scaled by GAP_FLOOR * |D1|."""
        if self.direct is None:
            return float("nan")
        d = self.direct[k - 1]
        scale = max(np.linalg.norm(d), GAP_FLOOR * np.linalg.norm(self.direct[0]), np.finfo(float).tiny)
        return float(np.linalg.norm(self.measured[k - 1] - d) / scale)


def grid_digest(grid: Grid) -> str:
    h = hashlib.sha256(repr((grid.spec, grid.nodes_per_axis)).encode())
    return h.hexdigest()[:16]


def nonlinearity_digest(a: Nonlinearity) -> str:
    h = hashlib.sha256(np.ascontiguousarray(a.coeffs).tobytes() + repr(a.radius).encode())
    return h.hexdigest()[:16]


def dn_derivatives(
    A,
    a: Nonlinearity,
    basis1: ExteriorBasis,
    basis2: ExteriorBasis,
    grid: Grid,
    s: float,
    K: int,
    scheme: StencilScheme | None = None,
    opts: SolverOptions | None = None,
    direct: bool = True,
    check: bool = True,
    model=None,
) -> DnData:
    """Amplitude derivatives D^(k)[i, j] of B[u_{eps f_i}, h_j] for k = 1..K.

    The measured derivatives use the stencil at its maximal order; the error
    estimate is the gap to the sub-stencil. ``direct`` adds cascade-based
    values computed from ``a`` itself.
    """
    opts = SolverOptions() if opts is None else opts
    scheme = StencilScheme.default(opts.eps0) if scheme is None else scheme
    if K < 1 or K > len(scheme.offsets) - 1:
        raise SpecViolation(f"derivative order {K} not supported by the stencil")
    model = ForwardModel(grid, s, A, a.q) if model is None else model
    eps = scheme.eps
    if np.max(np.abs(eps)) * np.max(np.abs(basis1.fields)) > opts.eps0 * (1 + 1e-12):
        raise SpecViolation("stencil amplitudes exceed the data amplitude limit")
    n1, n2 = len(basis1), len(basis2)
    P = np.zeros((n1, n2, len(eps)))
    for e, amp in enumerate(eps):
        if amp == 0:
            continue
        us = [solve_nonlinear(A, a, amp * f, grid, s, opts, model=model).u for f in basis1.fields]
        P[:, :, e] = pairing_matrix(model, us, basis2.fields)
    measured = np.zeros((K, n1, n2))
    error = np.zeros(K)
    sub_idx = [scheme.offsets.index(o) for o in scheme.sub]
    for k in range(1, K + 1):
        measured[k - 1] = P @ scheme.weights(k)
        if k < len(scheme.sub):
            coarse = P[:, :, sub_idx] @ scheme.weights(k, scheme.sub)
            error[k - 1] = np.linalg.norm(measured[k - 1] - coarse)
    direct_D = direct_derivatives(A, a, basis1, basis2, grid, s, K, model) if direct else None
    if check and direct_D is not None:
        scale = np.linalg.norm(direct_D[0])
        for k in range(1, K + 1):
            ref = np.linalg.norm(direct_D[k - 1])
            if ref > 1e-8 * scale and error[k - 1] > 0.1 * ref:
                raise StencilTooCoarse(f"estimated FD error of order {k} is {error[k - 1] / ref:.1%} of the direct value")
    meta = {
        "format": FORMAT_TAG,
        "s": s,
        "K": K,
        "grid": grid_digest(grid),
        "nodes_per_axis": grid.nodes_per_axis,
        "A": A.digest() if A is not None else "zero",
        "a": nonlinearity_digest(a),
        "stencil": scheme.describe(),
        "basis_w1": basis1.describe(),
        "basis_w2": basis2.describe(),
    }
    return DnData(eps, P, measured, direct_D, error, meta)


def direct_derivatives(A, a, basis1, basis2, grid, s, K, model=None) -> np.ndarray:
    """D^(k)[i, j] from cascade fields; the test functions vanish on omega."""
    model = ForwardModel(grid, s, A, a.q) if model is None else model
    out = np.zeros((K, len(basis1), len(basis2)))
    cascades = [solve_cascade(A, a, f, grid, s, K, model=model) for f in basis1.fields]
    for k in range(1, K + 1):
        out[k - 1] = pairing_matrix(model, [c[k - 1] for c in cascades], basis2.fields)
    return out


def derivative_pairing(model, a, us, k, v):
    """k-th amplitude derivative of B[u_eps, v] from cascade fields, for any v."""
    grid = model.grid
    src = np.where(grid.interior, cascade_source(a, us, k), 0.0)
    return float(np.sum(v * grid.weights * (model.apply(us[k - 1]) + src)))


# --- comparison ---------------------------------------------------------------


@dataclass
class DnComparison:
    equal: bool
    first_differing_order: int | None
    gaps: list


def _same_layout(d1: DnData, d2: DnData):
    keys = ("grid", "s", "stencil", "basis_w1", "basis_w2")
    for key in keys:
        if d1.metadata.get(key) != d2.metadata.get(key):
            raise BasisMismatch(f"DN data differ in {key}")
    if d1.measured.shape != d2.measured.shape:
        raise BasisMismatch("DN data have different shapes")


def dn_compare(d1: DnData, d2: DnData, tol: float, mode="measured") -> DnComparison:
    """Per-order gaps max|D1 - D2| relative to max|D1|, max|D2| of that order."""
    _same_layout(d1, d2)
    gaps, first = [], None
    for k in range(1, d1.order + 1):
        a, b = d1.derivative(k, mode), d2.derivative(k, mode)
        scale = max(np.max(np.abs(a)), np.max(np.abs(b)), np.finfo(float).tiny)
        gap = float(np.max(np.abs(a - b)) / scale)
        gaps.append(gap)
        if gap > tol and first is None:
            first = k
    return DnComparison(first is None, first, gaps)


def dn_restriction_equal(d1: DnData, d2: DnData, tol: float, mode="measured") -> bool:
    return dn_compare(d1, d2, tol, mode).equal


# --- serialization ------------------------------------------------------------


def _write_block(buf, name, array):
    array = np.asarray(array, dtype=float)
    buf.write(f"[{name}] {' '.join(str(d) for d in array.shape)}\n")
    flat = array.reshape(-1, array.shape[-1]) if array.ndim > 1 else array[None, :]
    np.savetxt(buf, flat, fmt="%.16e", delimiter=",")


def dumps_dndata(dn: DnData) -> str:
    buf = io.StringIO()
    buf.write(f"# {FORMAT_TAG}\n")
    buf.write(json.dumps(dn.metadata, sort_keys=True) + "\n")
    _write_block(buf, "eps", dn.eps)
    _write_block(buf, "pairings", dn.pairings)
    _write_block(buf, "measured", dn.measured)
    _write_block(buf, "error", dn.error)
    if dn.direct is not None:
        _write_block(buf, "direct", dn.direct)
    return buf.getvalue()


def loads_dndata(text: str) -> DnData:
    lines = text.splitlines()
    if not lines or lines[0] != f"# {FORMAT_TAG}":
        raise ValueError("not a DN data file")
    meta = json.loads(lines[1])
    blocks, i = {}, 2
    while i < len(lines):
        head = lines[i]
        if not head.startswith("["):
            raise ValueError(f"malformed block header {head!r}")
        name, _, dims = head[1:].partition("]")
        shape = tuple(int(d) for d in dims.split())
        rows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[i + 1 : i + 1 + rows]])
        blocks[name] = data.reshape(shape)
        i += 1 + rows
    return DnData(
        blocks["eps"], blocks["pairings"], blocks["measured"], blocks.get("direct"), blocks["error"], meta
    )
