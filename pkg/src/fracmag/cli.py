"""Command-line front end.

Subcommands: check, solve, dnmap, reconstruct, oracle.
Exit codes: 0 success, 1 I/O error, 2 violated precondition, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import dn_map, forward, inversion, nonlocal_ops, oracles
from .config import RunConfig, load_config
from .errors import BasisMismatch, ContractionFailure, DomainError, NumericalFailure, SpecViolation
from .grid import build_grid, standard_domain
from .io import atomic_write_text, write_field_csv, write_report
from .potentials import (
    check_admissibility,
    cubic_preset,
    gauge_equivalent,
    gauge_invariants,
    gauge_partner,
    separable_bump_potential,
)

log = logging.getLogger("fracmag")

EXIT_OK, EXIT_IO, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 1, 2, 3


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out is not None:
        return Path(args.out)
    if cfg is not None:
        return cfg.base_dir / cfg.output
    return Path("out")


# --- check ---------------------------------------------------------------------


def cmd_check(cfg: RunConfig, out: Path, seed: int) -> int:
    grid = cfg.grid()
    A = cfg.magnetic(grid)
    a = cfg.nonlinearity(grid)
    adm = check_admissibility(A, a, grid, cfg.s)
    report = {
        "admissibility": dataclasses.asdict(adm),
        "violations": adm.violations(),
        "validity_radius": a.radius,
    }
    # gauge self-consistency: a partner built from a random symmetric potential
    # must give the same operator
    rng = np.random.default_rng(seed)
    q = a.q
    if A is not None:
        extra = separable_bump_potential(grid, rng.uniform(-0.5, 0.5, grid.dim))
        A2, q2 = gauge_partner(A, q, extra, grid, cfg.s)
        M1 = nonlocal_ops.assemble_magnetic(grid, cfg.s, A, q).matrix
        M2 = nonlocal_ops.assemble_magnetic(grid, cfg.s, A2, q2).matrix
        gap = float(np.max(np.abs(M1 - M2)) / np.max(np.abs(M1)))
        report["gauge"] = {"partner_equivalent": gauge_equivalent((A, q), (A2, q2), grid, cfg.s), "operator_gap": gap}
    else:
        report["gauge"] = {"partner_equivalent": True, "operator_gap": 0.0}
    sigma = gauge_invariants(A, q, grid, cfg.s).sigma[grid.interior]
    report["sigma_min"] = float(sigma.min())
    gauge_ok = report["gauge"]["partner_equivalent"] and report["gauge"]["operator_gap"] <= 1e-8
    report["passed"] = bool(adm.passed and gauge_ok)
    write_report(out / "check_report.json", report)
    for v in adm.violations():
        log.warning("violated: %s", v)
    if not gauge_ok:
        log.warning("gauge self-consistency failed (operator gap %.3g)", report["gauge"]["operator_gap"])
    log.info("check %s", "passed" if report["passed"] else "failed")
    return EXIT_OK if report["passed"] else EXIT_PRECONDITION


# --- solve ---------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out: Path, seed: int) -> int:
    grid = cfg.grid()
    A = cfg.magnetic(grid)
    a = cfg.nonlinearity(grid)
    shape = cfg.data.shape(grid)
    model = forward.ForwardModel(grid, cfg.s, A, a.q)
    report = {"amplitude_requested": cfg.data.amplitude}
    try:
        if cfg.data.adaptive:
            sol, amp = forward.solve_nonlinear_adaptive(A, a, shape, cfg.data.amplitude, grid, cfg.s, cfg.solver, model)
        else:
            amp = cfg.data.amplitude
            sol = forward.solve_nonlinear(A, a, amp * shape, grid, cfg.s, cfg.solver, model=model)
    except ContractionFailure as exc:
        report.update(failure=type(exc).__name__, message=str(exc), suggested_amplitude=exc.suggested_amplitude)
        write_report(out / "solve_report.json", report)
        log.error("%s: %s; try amplitude %s", type(exc).__name__, exc, exc.suggested_amplitude)
        return EXIT_NUMERICAL
    g = amp * shape
    u_lin = model.solve(None, g)
    barrier = forward.build_barrier(grid, cfg.s, model=model)
    lin = forward.LinearProblem(A, a.q, grid.zeros(), g)
    bound = forward.linf_bound_check(forward.Solution(u_lin, 0.0), lin, barrier, grid)
    report.update(
        amplitude_used=amp,
        iterations=sol.iterations,
        contraction_factor=sol.contraction_estimate,
        residual_inf=sol.residual_inf,
        picard_differences=sol.history,
        nonlinear_correction_inf=float(np.max(np.abs(sol.u - u_lin))),
        barrier={"lambda": barrier.lam, "C": barrier.C, "R": barrier.R, "min_M_phi": barrier.achieved},
        linear_bound={"norm_u": bound.norm_u, "bound": bound.bound, "margin": bound.margin, "passed": bound.passed},
        nonlinear_sup_margin=float(np.max(np.abs(g)) - np.max(np.abs(sol.u))),
    )
    write_field_csv(out / "solution.csv", grid, {"u": sol.u, "u_linear": u_lin, "g": g})
    write_report(out / "solve_report.json", report)
    log.info(
        "solved in %d Picard step(s), contraction factor %.3g, residual %.2e",
        sol.iterations,
        sol.contraction_estimate,
        sol.residual_inf,
    )
    return EXIT_OK


# --- dnmap / reconstruct -------------------------------------------------------


def _bases(cfg: RunConfig, grid):
    b1 = dn_map.make_basis(grid, "w1", cfg.dn.n_w1, cfg.dn.radius_w1)
    b2 = dn_map.make_basis(grid, "w2", cfg.dn.n_w2, cfg.dn.radius_w2)
    return b1, b2


def cmd_dnmap(cfg: RunConfig, out: Path, seed: int) -> int:
    grid = cfg.grid()
    A = cfg.magnetic(grid)
    a = cfg.nonlinearity(grid)
    b1, b2 = _bases(cfg, grid)
    dn = dn_map.dn_derivatives(A, a, b1, b2, grid, cfg.s, cfg.dn.K, cfg.dn.scheme(cfg.solver.eps0), cfg.solver)
    atomic_write_text(out / "dndata.txt", dn_map.dumps_dndata(dn))
    report = {
        "K": dn.order,
        "dual_mode_gap": [dn.dual_mode_gap(k) for k in range(1, dn.order + 1)],
        "fd_error_estimate": dn.error,
        "n_w1": len(b1),
        "n_w2": len(b2),
    }
    write_report(out / "dnmap_report.json", report)
    log.info("DN data written; dual-mode gaps %s", ", ".join(f"{g:.2e}" for g in report["dual_mode_gap"]))
    return EXIT_OK


def _basis_from_metadata(grid, meta: dict, window: str):
    desc = meta[f"basis_{window}"]
    basis = dn_map.make_basis(grid, window, len(desc["centers"]), desc["radius"])
    if not np.allclose(basis.centers, np.asarray(desc["centers"]), rtol=0, atol=1e-12):
        raise BasisMismatch(f"{window} basis of the DN file does not match this configuration")
    return basis


def cmd_reconstruct(cfg: RunConfig, out: Path, seed: int, dn_file) -> int:
    """Blind inversion: reads (A, c_1) from the config and everything else from the DN file."""
    grid = cfg.grid()
    dn = dn_map.loads_dndata(Path(dn_file).read_text())
    meta = dn.metadata
    if meta["grid"] != dn_map.grid_digest(grid) or meta["s"] != cfg.s:
        raise BasisMismatch("DN file was produced on a different grid or order s")
    A = cfg.magnetic(grid)
    q = cfg.linear_part(grid)
    b1 = _basis_from_metadata(grid, meta, "w1")
    b2 = _basis_from_metadata(grid, meta, "w2")
    result = inversion.reconstruct_all(dn, A, q, b1, b2, grid, cfg.s, dn.order, cfg.inversion)
    columns = {"u1": result.u1}
    for k, est in result.estimates.items():
        columns[f"c{k}_hat"] = est.values
        columns[f"mask{k}"] = est.mask.astype(float)
    write_field_csv(out / "reconstruction.csv", grid, columns)
    report = {
        "complete": result.complete,
        "stopped_at": result.stopped_at,
        "reason": result.reason,
        "positivity_margin": result.positivity_margin,
        "orders": {
            str(k): {"runge_misfit": e.runge_misfit, "residual": e.residual, "masked_nodes": int((~e.mask[grid.interior]).sum())}
            for k, e in result.estimates.items()
        },
    }
    write_report(out / "reconstruct_report.json", report)
    log.info("recovered orders %s%s", sorted(result.estimates), "" if result.complete else f" (stopped: {result.reason})")
    return EXIT_OK if result.complete else EXIT_NUMERICAL


# --- oracles -------------------------------------------------------------------


def oracle_symbol(cfg=None, tol=0.02):
    spec = standard_domain(1, 8.0)
    grid = build_grid(spec, 256)
    x = grid.points[:, 0]
    errors = {}
    for s in (0.25, 0.5, 0.75):
        L = nonlocal_ops.assemble_frac_laplacian(grid, s, rows="all")
        ref = oracles.gaussian_symbol(x[grid.interior], s)
        got = L.apply(np.exp(-(x**2)))[grid.interior]
        errors[str(s)] = float(np.max(np.abs(got - ref) / np.abs(ref)))
    return {"max_relative_error": errors, "tolerance": tol, "passed": max(errors.values()) <= tol}


def oracle_getoor(cfg=None, tol=0.05):
    grid = build_grid(standard_domain(1), 256)
    x = grid.points[:, 0]
    L = nonlocal_ops.assemble_frac_laplacian(grid, 0.5, rows="all")
    core = grid.core(3)
    got = L.apply(oracles.getoor_profile(x))[core]
    ref = oracles.getoor_constant(1, 0.5)
    err = float(np.max(np.abs(got - ref)) / ref)
    return {"max_relative_error": err, "reference": ref, "core_nodes": int(core.sum()), "tolerance": tol, "passed": err <= tol}


def oracle_quadrature(cfg=None, tol=0.02):
    """Adaptive quadrature of the singular integral at sample nodes for a compact bump."""
    grid = build_grid(standard_domain(1), 256)
    x = grid.points[:, 0]
    s = 0.5 if cfg is None else cfg.s

    def profile(y):
        y = np.asarray(y, dtype=float)
        return np.where(np.abs(y) < 1.5, np.exp(1 - 1 / np.clip(1 - (y / 1.5) ** 2, 1e-300, None)), 0.0)

    L = nonlocal_ops.assemble_frac_laplacian(grid, s, rows="all")
    got = L.apply(profile(x))
    idx = grid.interior_index[:: max(1, len(grid.interior_index) // 8)]
    ref = np.array([oracles.singular_integral_1d(profile, x[i], s, breakpoints=(-1.5, 1.5)) for i in idx])
    err = float(np.max(np.abs(got[idx] - ref)) / np.max(np.abs(ref)))
    return {"max_relative_error": err, "nodes": len(idx), "tolerance": tol, "passed": err <= tol}


def oracle_adjointness(cfg=None, seed=0, tol=1e-12, tol_fact=1e-10):
    grid = build_grid(standard_domain(1), 96)
    s = 0.5 if cfg is None else cfg.s
    rng = np.random.default_rng(seed)
    N = grid.n_nodes
    P = nonlocal_ops.PairVectorField(rng.standard_normal((N, N, 1)), rng.standard_normal(N))
    v = rng.standard_normal(N)
    lhs = float(np.sum(nonlocal_ops.frac_divergence(grid, s, P) * v * grid.weights))
    rhs = nonlocal_ops.pair_inner(grid, s, P, nonlocal_ops.frac_gradient(grid, s, v))
    duality = abs(lhs - rhs) / max(abs(lhs), 1.0)
    L = nonlocal_ops.assemble_frac_laplacian(grid, s, rows="all")
    fact = 0.0
    for _ in range(20):
        u = rng.standard_normal(N)
        Lu = L.apply(u)
        gap = nonlocal_ops.frac_divergence(grid, s, nonlocal_ops.frac_gradient(grid, s, u)) - Lu
        fact = max(fact, float(np.max(np.abs(gap)) / np.max(np.abs(Lu))))
    return {
        "duality_residual": duality,
        "factorization_residual": fact,
        "tolerance": [tol, tol_fact],
        "passed": duality <= tol and fact <= tol_fact,
    }


def oracle_fd_cascade(cfg=None, tol=0.01):
    if cfg is None:
        grid = build_grid(standard_domain(1), 96)
        a, A, s, opts = cubic_preset(grid), None, 0.5, forward.SolverOptions()
        f = dn_map.make_basis(grid, "w1", 1).fields[0]
    else:
        grid, s, opts = cfg.grid(), cfg.s, cfg.solver
        a, A = cfg.nonlinearity(grid), cfg.magnetic(grid)
        f = cfg.data.shape(grid)
    K = min(3, a.order)
    model = forward.ForwardModel(grid, s, A, a.q)
    us = forward.solve_cascade(A, a, f, grid, s, K, opts, model)
    scheme = dn_map.StencilScheme.default(opts.eps0 / np.max(np.abs(f)))
    fields = [forward.solve_nonlinear(A, a, e * f, grid, s, opts, model=model).u if e else grid.zeros() for e in scheme.eps]
    F = np.stack(fields, axis=-1)
    gaps = {}
    for k in range(1, K + 1):
        fd = F @ scheme.weights(k)
        gaps[str(k)] = float(np.max(np.abs(fd - us[k - 1])) / np.max(np.abs(us[k - 1])))
    return {"relative_gap": gaps, "tolerance": tol, "passed": max(gaps.values()) <= tol}


ORACLES = {
    "symbol": oracle_symbol,
    "getoor": oracle_getoor,
    "quadrature": oracle_quadrature,
    "adjointness": oracle_adjointness,
    "fd-cascade": oracle_fd_cascade,
}


def cmd_oracle(cfg, out: Path, seed: int, which: str) -> int:
    func = ORACLES[which]
    report = func(cfg, seed=seed) if which == "adjointness" else func(cfg)
    report["oracle"] = which
    write_report(out / f"oracle_{which}.json", report)
    log.info("oracle %s: %s", which, "pass" if report["passed"] else "FAIL")
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracmag", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--out", type=Path, default=None, help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config seed)")
    common.add_argument("--quiet", action="store_true", help="only print errors")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="admissibility and gauge self-consistency")
    sub.add_parser("solve", parents=[common], help="solve the semilinear exterior problem")
    sub.add_parser("dnmap", parents=[common], help="write DN derivative data")
    rec = sub.add_parser("reconstruct", parents=[common], help="recover c_k from a DN data file")
    rec.add_argument("--dn", type=Path, required=True, help="DN data file written by dnmap")
    orc = sub.add_parser("oracle", parents=[common], help="run an independent reference check")
    orc.add_argument("which", choices=sorted(ORACLES))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        cfg = None
        if args.config is not None:
            cfg = load_config(args.config)
        elif args.command != "oracle":
            log.error("--config is required for %s", args.command)
            return EXIT_PRECONDITION
        seed = args.seed if args.seed is not None else (cfg.seed if cfg is not None else 0)
        out = _out_dir(args, cfg)
        if args.command == "check":
            code = cmd_check(cfg, out, seed)
        elif args.command == "solve":
            code = cmd_solve(cfg, out, seed)
        elif args.command == "dnmap":
            code = cmd_dnmap(cfg, out, seed)
        elif args.command == "reconstruct":
            code = cmd_reconstruct(cfg, out, seed, args.dn)
        else:
            code = cmd_oracle(cfg, out, seed, args.which)
    except (OSError, yaml.YAMLError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (SpecViolation, DomainError, BasisMismatch) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_PRECONDITION
    except NumericalFailure as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
