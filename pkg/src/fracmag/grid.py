"""Computational box, domain, exterior windows and node classification.

Nodes are cell centres of a uniform tensor lattice covering the box. A node
belongs to the domain iff its centre lies in the (open) domain; the cell
volume ``h**n`` is the quadrature weight of every node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import SpecViolation

MAX_NODES = {1: 512, 2: 40 * 40}


@dataclass(frozen=True)
class Region:
    """Axis-aligned open box or open ball.

    ``size`` is the radius of a ball, or the tuple of half-widths of a box.
    """

    kind: str
    center: tuple
    size: tuple

    def __post_init__(self):
        if self.kind not in ("box", "ball"):
            raise SpecViolation(f"unknown region kind {self.kind!r}")
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        size = tuple(float(c) for c in np.atleast_1d(self.size))
        if self.kind == "ball":
            if len(size) != 1:
                raise SpecViolation("a ball takes a single radius")
        elif len(size) == 1:
            size = size * len(center)
        if len(size) != len(center) and self.kind == "box":
            raise SpecViolation("box half-widths do not match the dimension")
        if min(size) <= 0:
            raise SpecViolation("region size must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)

    @classmethod
    def box(cls, lo, hi):
        lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
        return cls("box", tuple((lo + hi) / 2), tuple((hi - lo) / 2))

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", tuple(np.atleast_1d(center)), (radius,))

    @property
    def dim(self):
        return len(self.center)

    @property
    def lo(self):
        return np.asarray(self.center) - self._half

    @property
    def hi(self):
        return np.asarray(self.center) + self._half

    @property
    def _half(self):
        if self.kind == "ball":
            return np.full(self.dim, self.size[0])
        return np.asarray(self.size)

    @property
    def diameter(self):
        if self.kind == "ball":
            return 2 * self.size[0]
        return 2 * float(np.linalg.norm(self.size))

    def depth(self, points):
        """Signed distance to the boundary, positive inside."""
        p = np.atleast_2d(points) - np.asarray(self.center)
        if self.kind == "ball":
            return self.size[0] - np.linalg.norm(p, axis=1)
        return np.min(np.asarray(self.size) - np.abs(p), axis=1)

    def contains(self, points):
        return self.depth(points) > 0

    def farthest_from_origin(self):
        """sup of |x| over the closure."""
        c = np.asarray(self.center)
        if self.kind == "ball":
            return float(np.linalg.norm(c) + self.size[0])
        return float(np.linalg.norm(np.abs(c) + np.asarray(self.size)))

    def gap(self, other: "Region"):
        """Distance between the two closures; negative when they overlap."""
        if self.kind == "box" and other.kind == "box":
            sep = np.maximum(self.lo - other.hi, other.lo - self.hi)
            if np.all(sep < 0):
                return float(np.max(sep))
            return float(np.linalg.norm(np.clip(sep, 0, None)))
        if self.kind == "ball" and other.kind == "ball":
            d = np.linalg.norm(np.subtract(self.center, other.center))
            return float(d - self.size[0] - other.size[0])
        box, ball = (self, other) if self.kind == "box" else (other, self)
        c = np.asarray(ball.center)
        nearest = np.clip(c, box.lo, box.hi)
        d = np.linalg.norm(c - nearest)
        if d == 0:
            return float(-ball.size[0] - np.min(np.minimum(c - box.lo, box.hi - c)))
        return float(d - ball.size[0])

    def inside_box(self, lo, hi, strict=False):
        if strict:
            return bool(np.all(self.lo > lo) and np.all(self.hi < hi))
        return bool(np.all(self.lo >= lo) and np.all(self.hi <= hi))


@dataclass(frozen=True)
class DomainSpec:
    """Domain, exterior windows and computational box."""

    omega: Region
    w1: Region
    w2: Region
    box_lo: tuple
    box_hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.box_lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.box_hi))
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)
        self.validate()

    @property
    def dim(self):
        return len(self.box_lo)

    def validate(self):
        n = self.dim
        if n not in (1, 2):
            raise SpecViolation(f"dimension must be 1 or 2, got {n}")
        for name, r in (("omega", self.omega), ("w1", self.w1), ("w2", self.w2)):
            if r.dim != n:
                raise SpecViolation(f"{name} has dimension {r.dim}, box has {n}")
        lo, hi = np.asarray(self.box_lo), np.asarray(self.box_hi)
        if np.any(hi <= lo):
            raise SpecViolation("empty computational box")
        if not self.omega.inside_box(lo, hi, strict=True):
            raise SpecViolation("the closure of omega must lie in the interior of the box")
        # the far-field tail assumes u = 0 outside the box; keep it well away from omega
        padding = float(min(np.min(self.omega.lo - lo), np.min(hi - self.omega.hi)))
        if padding < self.omega.diameter / 2 - 1e-12:
            raise SpecViolation("the box must extend at least diam(omega)/2 beyond omega")
        for name, w in (("w1", self.w1), ("w2", self.w2)):
            if not w.inside_box(lo, hi):
                raise SpecViolation(f"{name} leaves the computational box")
            if w.gap(self.omega) < 0:
                raise SpecViolation(f"{name} intersects the closure of omega")


@dataclass(frozen=True, eq=False)
class Grid:
    spec: DomainSpec
    nodes_per_axis: int
    h: float
    shape: tuple
    points: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)
    in_w1: np.ndarray = field(repr=False)
    in_w2: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.spec.dim

    @property
    def n_nodes(self):
        return self.points.shape[0]

    @property
    def exterior(self):
        return ~self.interior

    @cached_property
    def weights(self):
        return np.full(self.n_nodes, self.h**self.dim)

    @property
    def cell_volume(self):
        return self.h**self.dim

    @cached_property
    def interior_index(self):
        return np.flatnonzero(self.interior)

    @cached_property
    def exterior_index(self):
        return np.flatnonzero(~self.interior)

    @cached_property
    def omega_depth(self):
        """Distance of each node to the boundary of omega (negative outside)."""
        return self.spec.omega.depth(self.points)

    def core(self, layers):
        """Interior nodes at least ``layers`` cells away from the boundary."""
        return self.interior & (self.omega_depth >= layers * self.h - 1e-12 * self.h)

    @property
    def key(self):
        return (self.spec, self.nodes_per_axis)

    def nearest_node(self, point):
        d = np.linalg.norm(self.points - np.atleast_1d(point), axis=1)
        return int(np.argmin(d))

    def zeros(self):
        return np.zeros(self.n_nodes)


def build_grid(spec: DomainSpec, nodes_per_axis: int, max_nodes=None) -> Grid:
    """Uniform cell-centred grid over the box of ``spec``."""
    n = spec.dim
    if nodes_per_axis < 16:
        raise SpecViolation("nodes_per_axis must be at least 16")
    limit = MAX_NODES[n] if max_nodes is None else max_nodes
    if nodes_per_axis**n > limit:
        raise SpecViolation(f"{nodes_per_axis**n} nodes exceeds the cap of {limit}")
    lo, hi = np.asarray(spec.box_lo), np.asarray(spec.box_hi)
    spacing = (hi - lo) / nodes_per_axis
    if not np.allclose(spacing, spacing[0], rtol=1e-12, atol=0):
        raise SpecViolation("the box must have equal side lengths (isotropic spacing)")
    h = float(spacing[0])
    axes = [lo[d] + h * (np.arange(nodes_per_axis) + 0.5) for d in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    interior = spec.omega.contains(points)
    in_w1 = spec.w1.contains(points) & ~interior
    in_w2 = spec.w2.contains(points) & ~interior
    for d in range(n):
        if len(np.unique(np.round(points[interior, d] / h, 6))) < 4:
            raise SpecViolation("omega must contain at least 4 nodes per axis")
    for name, mask in (("w1", in_w1), ("w2", in_w2)):
        if not mask.any():
            raise SpecViolation(f"{name} contains no grid nodes")
    for arr in (points, interior, in_w1, in_w2):
        arr.setflags(write=False)
    return Grid(spec, nodes_per_axis, h, (nodes_per_axis,) * n, points, interior, in_w1, in_w2)


def _mollifier(r2):
    """exp(1 - 1/(1 - r2)) on r2 < 1, else 0."""
    out = np.zeros_like(r2)
    inside = r2 < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def bump(grid: Grid, center, radius: float, amplitude: float = 1.0) -> np.ndarray:
    """Smooth compactly supported bump with peak ``amplitude`` at ``center``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    ball = Region.ball(center, radius)
    if not ball.inside_box(grid.spec.box_lo, grid.spec.box_hi):
        raise SpecViolation("bump support leaves the computational box")
    r2 = np.sum((grid.points - center) ** 2, axis=1) / radius**2
    return amplitude * _mollifier(r2)


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    f = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    g = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return f / (f + g)


def barrier_radius(grid: Grid, spec: DomainSpec | None = None) -> float:
    """Radius R of an origin-centred ball with omega compactly inside it.

    Uses R = 2 sup|x| over omega, shrunk to fit the box, and requires room for
    a one-cell collar plus a transition layer of at least two cells.
    """
    spec = grid.spec if spec is None else spec
    r_omega = spec.omega.farthest_from_origin()
    lo, hi = np.asarray(spec.box_lo), np.asarray(spec.box_hi)
    if np.any(lo >= 0) or np.any(hi <= 0):
        raise SpecViolation("the box must contain the origin to centre the barrier ball")
    r_box = float(min(np.min(-lo), np.min(hi)))
    radius = min(2.0 * r_omega, r_box)
    if radius < r_omega + 3 * grid.h:
        raise SpecViolation("no admissible ball B_R between omega and the box")
    return radius


def cutoff_eta(grid: Grid, spec: DomainSpec | None = None, radius: float | None = None):
    """Radial smooth cutoff: 1 on omega plus a one-cell collar, 0 outside B_R."""
    spec = grid.spec if spec is None else spec
    R = barrier_radius(grid, spec) if radius is None else float(radius)
    r_in = spec.omega.farthest_from_origin() + grid.h
    if R <= r_in:
        raise SpecViolation("cutoff radius does not clear omega")
    r = np.linalg.norm(grid.points, axis=1)
    return _smooth_step((R - r) / (R - r_in))


def standard_domain(dim: int = 1, half_width: float | None = None) -> DomainSpec:
    """Reference geometries.

    1D: omega = (-1, 1), windows (1.25, 2.75) and (-2.75, -1.25), box [-4, 4].
    2D: omega = unit disc, windows [1.2, 2.4] x [-1.2, 1.2] and its mirror,
    box [-2.5, 2.5]^2.
    """
    if dim == 1:
        L = 4.0 if half_width is None else half_width
        return DomainSpec(Region.box(-1, 1), Region.box(1.25, 2.75), Region.box(-2.75, -1.25), (-L,), (L,))
    if dim == 2:
        L = 2.5 if half_width is None else half_width
        return DomainSpec(
            Region.ball((0.0, 0.0), 1.0),
            Region.box((1.2, -1.2), (2.4, 1.2)),
            Region.box((-2.4, -1.2), (-1.2, 1.2)),
            (-L, -L),
            (L, L),
        )
    raise SpecViolation(f"dimension must be 1 or 2, got {dim}")
