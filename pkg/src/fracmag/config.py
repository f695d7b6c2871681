"""Run configuration: a YAML document with a fixed set of sections.

Unknown keys anywhere are rejected. See README.md for the grammar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dn_map import StencilScheme
from .errors import SpecViolation
from .forward import SolverOptions
from .grid import DomainSpec, Grid, Region, build_grid, bump
from .inversion import InversionOptions
from .potentials import (
    MagneticPotential,
    Nonlinearity,
    antisymmetric_radial_potential,
    constant_potential,
    separable_bump_potential,
)

TOP_KEYS = {"domain", "grid", "s", "potential", "nonlinearity", "solver", "data", "dn", "inversion", "output", "seed"}


def _require_keys(section: dict, allowed: set, where: str, required=()):
    if not isinstance(section, dict):
        raise SpecViolation(f"{where} must be a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise SpecViolation(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    missing = [k for k in required if k not in section]
    if missing:
        raise SpecViolation(f"missing key(s) in {where}: {', '.join(missing)}")


def parse_region(d: dict, where: str) -> Region:
    _require_keys(d, {"kind", "lo", "hi", "center", "radius"}, where, ("kind",))
    if d["kind"] == "box":
        _require_keys(d, {"kind", "lo", "hi"}, where, ("lo", "hi"))
        return Region.box(d["lo"], d["hi"])
    if d["kind"] == "ball":
        _require_keys(d, {"kind", "center", "radius"}, where, ("center", "radius"))
        return Region.ball(d["center"], d["radius"])
    raise SpecViolation(f"{where}: kind must be 'box' or 'ball'")


@dataclass(frozen=True)
class FieldSpec:
    """Scalar field on omega: constant, or Gaussian amplitude*exp(-|x-center|^2/width^2)."""

    kind: str = "constant"
    value: float = 0.0
    amplitude: float = 0.0
    center: tuple = ()
    width: float = 1.0

    @classmethod
    def parse(cls, d, where):
        if isinstance(d, (int, float)):
            return cls("constant", float(d))
        _require_keys(d, {"kind", "value", "amplitude", "center", "width"}, where, ("kind",))
        kind = d["kind"]
        if kind == "constant":
            _require_keys(d, {"kind", "value"}, where, ("value",))
            return cls("constant", float(d["value"]))
        if kind == "gaussian":
            _require_keys(d, {"kind", "amplitude", "center", "width"}, where, ("amplitude", "center", "width"))
            return cls("gaussian", 0.0, float(d["amplitude"]), tuple(float(c) for c in d["center"]), float(d["width"]))
        raise SpecViolation(f"{where}: kind must be 'constant' or 'gaussian'")

    def evaluate(self, grid: Grid) -> np.ndarray:
        if self.kind == "constant":
            vals = np.full(grid.n_nodes, self.value)
        else:
            if len(self.center) != grid.dim:
                raise SpecViolation("gaussian centre has the wrong dimension")
            r2 = np.sum((grid.points - np.asarray(self.center)) ** 2, axis=1)
            vals = self.amplitude * np.exp(-r2 / self.width**2)
        return np.where(grid.interior, vals, 0.0)


@dataclass(frozen=True)
class PotentialSpec:
    """Sum of preset terms; each term is (preset, parameter)."""

    terms: tuple = ()
    file: str | None = None

    @classmethod
    def parse(cls, d):
        if d is None:
            return cls()
        _require_keys(d, {"terms", "file"}, "potential")
        terms = []
        for i, t in enumerate(d.get("terms", []) or []):
            where = f"potential.terms[{i}]"
            _require_keys(t, {"preset", "strength", "vector"}, where, ("preset",))
            preset = t["preset"]
            if preset == "antisymmetric":
                _require_keys(t, {"preset", "strength"}, where, ("strength",))
                terms.append((preset, float(t["strength"])))
            elif preset in ("separable", "constant"):
                _require_keys(t, {"preset", "vector"}, where, ("vector",))
                terms.append((preset, tuple(float(v) for v in np.atleast_1d(t["vector"]))))
            else:
                raise SpecViolation(f"{where}: unknown preset {preset!r}")
        return cls(tuple(terms), d.get("file"))

    def build(self, grid: Grid, base_dir: Path | None = None) -> MagneticPotential | None:
        if not self.terms and self.file is None:
            return None
        A = MagneticPotential.zero(grid)
        for preset, param in self.terms:
            if preset == "antisymmetric":
                A = A + antisymmetric_radial_potential(grid, param)
            elif preset == "separable":
                A = A + separable_bump_potential(grid, param)
            else:
                A = A + constant_potential(grid, param)
        if self.file is not None:
            A = A + load_potential_csv(grid, Path(base_dir or ".") / self.file)
        return A


def load_potential_csv(grid: Grid, path) -> MagneticPotential:
    """Sparse listing with header ``i,j,a0[,a1]``; unlisted pairs are zero."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise SpecViolation(f"malformed potential file {path}: {exc}") from exc
    if data.shape[1] != 2 + grid.dim:
        raise SpecViolation(f"potential file needs {2 + grid.dim} columns")
    values = np.zeros((grid.n_nodes, grid.n_nodes, grid.dim))
    i, j = data[:, 0].astype(int), data[:, 1].astype(int)
    if np.any((i < 0) | (j < 0) | (i >= grid.n_nodes) | (j >= grid.n_nodes)):
        raise SpecViolation("potential file indexes nodes outside the grid")
    values[i, j] = data[:, 2:]
    return MagneticPotential(grid, values)


@dataclass(frozen=True)
class DataSpec:
    """Exterior datum amplitude * bump(center, radius), restricted to its window."""

    amplitude: float = 0.25
    window: str = "w1"
    center: tuple | None = None
    radius: float | None = None
    adaptive: bool = False

    @classmethod
    def parse(cls, d):
        if d is None:
            return cls()
        _require_keys(d, {"amplitude", "window", "center", "radius", "adaptive"}, "data")
        center = d.get("center")
        return cls(
            float(d.get("amplitude", 0.25)),
            str(d.get("window", "w1")),
            None if center is None else tuple(float(c) for c in np.atleast_1d(center)),
            None if d.get("radius") is None else float(d["radius"]),
            bool(d.get("adaptive", False)),
        )

    def shape(self, grid: Grid) -> np.ndarray:
        if self.window not in ("w1", "w2"):
            raise SpecViolation("data.window must be w1 or w2")
        region = grid.spec.w1 if self.window == "w1" else grid.spec.w2
        mask = grid.in_w1 if self.window == "w1" else grid.in_w2
        center = np.asarray(region.center) if self.center is None else np.asarray(self.center)
        radius = float(np.min(region.hi - region.lo)) / 2 * 0.9 if self.radius is None else self.radius
        if region.depth(center[None, :])[0] < radius:
            raise SpecViolation("data bump must lie strictly inside its window")
        return np.where(mask, bump(grid, center, radius), 0.0)


@dataclass(frozen=True)
class DnSpec:
    K: int = 2
    n_w1: int = 4
    n_w2: int = 12
    radius_w1: float | None = None
    radius_w2: float | None = None
    step: float | None = None

    @classmethod
    def parse(cls, d):
        if d is None:
            return cls()
        _require_keys(d, {"K", "n_w1", "n_w2", "radius_w1", "radius_w2", "step"}, "dn")
        return cls(**{k: (int(v) if k in ("K", "n_w1", "n_w2") else (None if v is None else float(v))) for k, v in d.items()})

    def scheme(self, eps0):
        return StencilScheme.default(eps0) if self.step is None else StencilScheme(self.step)


@dataclass(frozen=True)
class RunConfig:
    spec: DomainSpec
    nodes_per_axis: int
    s: float
    potential: PotentialSpec
    coefficients: tuple  # FieldSpec for c_1..c_K
    radius: float
    solver: SolverOptions
    data: DataSpec
    dn: DnSpec
    inversion: InversionOptions
    output: str = "out"
    seed: int = 0
    base_dir: Path = field(default=Path("."), compare=False)

    def grid(self) -> Grid:
        return build_grid(self.spec, self.nodes_per_axis)

    def nonlinearity(self, grid: Grid) -> Nonlinearity:
        coeffs = np.stack([c.evaluate(grid) for c in self.coefficients])
        return Nonlinearity(grid, coeffs, self.radius)

    def linear_part(self, grid: Grid) -> np.ndarray:
        """c_1 only; reading this never touches higher-order coefficients."""
        return self.coefficients[0].evaluate(grid)

    def magnetic(self, grid: Grid):
        return self.potential.build(grid, self.base_dir)


def parse_config(doc: dict, base_dir=".") -> RunConfig:
    _require_keys(doc, TOP_KEYS, "config", ("domain", "grid", "s", "nonlinearity"))
    dom = doc["domain"]
    _require_keys(dom, {"box", "omega", "w1", "w2"}, "domain", ("box", "omega", "w1", "w2"))
    _require_keys(dom["box"], {"lo", "hi"}, "domain.box", ("lo", "hi"))
    spec = DomainSpec(
        parse_region(dom["omega"], "domain.omega"),
        parse_region(dom["w1"], "domain.w1"),
        parse_region(dom["w2"], "domain.w2"),
        tuple(np.atleast_1d(dom["box"]["lo"])),
        tuple(np.atleast_1d(dom["box"]["hi"])),
    )
    _require_keys(doc["grid"], {"nodes_per_axis"}, "grid", ("nodes_per_axis",))
    s = float(doc["s"])
    if not 0 < s < 1:
        raise SpecViolation("s must lie in (0, 1)")
    nl = doc["nonlinearity"]
    _require_keys(nl, {"radius", "coefficients"}, "nonlinearity", ("coefficients",))
    coeffs = tuple(FieldSpec.parse(c, f"nonlinearity.coefficients[{i}]") for i, c in enumerate(nl["coefficients"]))
    if not coeffs:
        raise SpecViolation("nonlinearity needs at least the linear coefficient c_1")
    solver = doc.get("solver") or {}
    _require_keys(solver, set(SolverOptions.__dataclass_fields__), "solver")
    inv = doc.get("inversion") or {}
    _require_keys(inv, set(InversionOptions.__dataclass_fields__), "inversion")
    out = doc.get("output") or {}
    _require_keys(out, {"dir"}, "output")
    return RunConfig(
        spec=spec,
        nodes_per_axis=int(doc["grid"]["nodes_per_axis"]),
        s=s,
        potential=PotentialSpec.parse(doc.get("potential")),
        coefficients=coeffs,
        radius=float(nl.get("radius", 1.0)),
        solver=SolverOptions(**solver),
        data=DataSpec.parse(doc.get("data")),
        dn=DnSpec.parse(doc.get("dn")),
        inversion=InversionOptions(**inv),
        output=str(out.get("dir", "out")),
        seed=int(doc.get("seed", 0)),
        base_dir=Path(base_dir),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return parse_config(doc or {}, path.parent)
