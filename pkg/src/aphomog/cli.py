"""Batch front-end: load a field spec, run an experiment, emit reports.

Exit codes: 0 success, 2 validation error, 3 solver non-convergence,
4 flagged property violation, 64 unknown subcommand, 66 unreadable spec.
All knobs are validated against the module guards before any numerical
work starts.
"""

import argparse
import math
import os
import sys
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import corrector, diffcalc, heat, homog, reports
from .field import (CoefficientField, ResonantWindingError, diophantine_constant,
                    load_field_spec, sigma)
from .sampling import SupSampler, torus_lattice

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_FLAGGED = 4
EXIT_USAGE = 64
EXIT_NOINPUT = 66

COMMANDS = ("field-check", "sigma", "rho", "rho-star", "omega", "ergodic", "poincare",
            "hermite", "corrector", "sweep", "psi-decay", "zeta-check", "effective", "rate")


@dataclass
class ExperimentConfig:
    command: str
    spec_path: str
    out_dir: str
    knobs: dict = dataclass_field(default_factory=dict)
    plot: bool = False

    def validate(self):
        k = self.knobs
        for name in ("eps", "eps_list"):
            vals = k.get(name)
            if vals is None:
                continue
            for v in np.atleast_1d(vals):
                if not 0.0 < v <= 1.0:
                    raise ValueError(f"eps values must lie in (0, 1]: got {v}")
        if "R_list" in k:
            for R in k["R_list"]:
                if R < 1.0:
                    raise ValueError(f"R must be >= 1: got {R}")
        if "k" in k and not 1 <= k["k"] <= diffcalc.MAX_SEARCH_K:
            raise ValueError(f"k must lie in [1, {diffcalc.MAX_SEARCH_K}]")
        if "tol" in k and not 0.0 < k["tol"] <= 1e-6:
            raise ValueError("tol must lie in (0, 1e-6]")
        if "n" in k and "L" in k:
            grid_d = k.get("d", 1)
            corrector.PeriodicGrid(grid_d, k["L"], k["n"])  # raises on bad shape
            for v in np.atleast_1d(k.get("eps_list", k.get("eps", []))):
                corrector.PeriodicGrid(grid_d, k["L"], k["n"]).require_eps(v)


def _sampler_from(args):
    return SupSampler(base_res=args.base_res, y_res=args.y_res,
                      z_res=args.z_res, gs_iters=args.gs_iters)


def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def _grid(args, d):
    return corrector.PeriodicGrid(d, args.L, args.n)


def _out(cfg, name):
    return os.path.join(cfg.out_dir, name)


def _provenance(cfg):
    knobs = {key: val for key, val in sorted(cfg.knobs.items())
             if isinstance(val, (int, float, str))}
    knobs.update({f"{key}_{i}": v for key, val in sorted(cfg.knobs.items())
                  if isinstance(val, (list, tuple)) for i, v in enumerate(val)})
    return reports.provenance_line(cfg.spec_path, command=cfg.command, **knobs)


# ---------------------------------------------------------------------------
# subcommand bodies (called after validation; return exit code)


def _cmd_field_check(cfg, fld, args):
    res = max(8, int((1 << 14) ** (1.0 / fld.winding.m)))
    vals = fld.modes.torus_values(torus_lattice(fld.winding.m, res))
    sym = 0.5 * (vals + np.swapaxes(vals, 1, 2))
    eigs = np.linalg.eigvalsh(sym)
    lo, hi = float(eigs.min()), float(np.linalg.svd(vals, compute_uv=False).max())
    rows = [("ellipticity_min", lo), ("operator_norm_max", hi), ("lambda", fld.Lambda),
            ("holder_gamma", fld.holder[0]), ("holder_K", fld.holder[1]), ("kappa", fld.kappa)]
    try:
        rep = diophantine_constant(fld.winding, args.theta, args.zmax)
        rows += [("diophantine_theta", rep.theta), ("diophantine_A_est", rep.A_est),
                 ("diophantine_Zmax", rep.Z_max)]
    except ResonantWindingError:
        rows += [("diophantine_theta", args.theta), ("diophantine_A_est", 0.0),
                 ("diophantine_Zmax", args.zmax)]
    for j in range(args.jmax + 1):
        bound = sum(fld.entries[key].derivative_norm_bound(j) for key in sorted(fld.entries))
        rows.append((f"derivative_bound_{j}", bound))
    reports.write_csv(_out(cfg, "field-check.csv"), ("quantity", "value"), rows, _provenance(cfg))
    return EXIT_OK


def _cmd_sigma(cfg, fld, args):
    rows = []
    for R in cfg.knobs["R_list"]:
        n_z = args.z_res if args.z_res_scale == 0 else max(args.z_res, int(args.z_res_scale * R))
        est = sigma(fld.winding, R, n_y=args.y_res, n_z=n_z, gs_iters=args.gs_iters)
        rows.append(est.row())
    reports.write_csv(_out(cfg, "sigma.csv"),
                      ("kind", "k", "R", "value", "res_y", "res_z", "direction"),
                      rows, _provenance(cfg))
    if cfg.plot:
        reports.emit_plot(_out(cfg, "sigma.svg"), [(r[2], r[3]) for r in rows],
                          kind="loglog", title="discrepancy sigma(M, R)", xlabel="R", ylabel="sigma")
    return EXIT_OK


def _rho_like(cfg, fld, args, func, name):
    sampler = _sampler_from(args)
    rows = []
    for R in cfg.knobs["R_list"]:
        est = func(fld.modes, R, args.k, sampler)
        rows.append(est.row())
    reports.write_csv(_out(cfg, f"{name}.csv"),
                      ("kind", "k", "R", "value", "res_y", "res_z", "direction"),
                      rows, _provenance(cfg))
    if cfg.plot:
        reports.emit_plot(_out(cfg, f"{name}.svg"), [(r[2], r[3]) for r in rows],
                          kind="loglog", title=f"{name}_{args.k}", xlabel="R", ylabel=name)
    return EXIT_OK


def _cmd_rho_star(cfg, fld, args):
    sampler = _sampler_from(args)
    est = diffcalc.rho_star(fld.modes, args.R, C=args.C, k_max=args.kmax, sampler=sampler)
    rows = [("rho_star", est.k, est.R, est.value, est.res_y, est.res_z, est.direction)]
    for k, val in sorted(est.extra["per_k"].items()):
        rows.append((f"candidate_k{k}", k, est.R, val, est.res_y, est.res_z, est.direction))
    reports.write_csv(_out(cfg, "rho-star.csv"),
                      ("kind", "k", "R", "value", "res_y", "res_z", "direction"),
                      rows, _provenance(cfg))
    return EXIT_OK


def _cmd_ergodic(cfg, fld, args):
    f = fld.entry_field(args.entry_i, args.entry_j)
    fit = heat.ErgodicFit(sampler=_sampler_from(args))
    rows = []
    for k in cfg.knobs["k_list"]:
        rep = heat.ergodic_bound_check(f, cfg.knobs["t_list"], int(k), cfg.knobs["R_list"], fit)
        for (t, lhs, rhs, argR, lhs_g, rhs_g, argR_g) in rep.rows:
            rows.append((k, t, lhs, rhs, argR, rep.fitted_C, rep.fitted_c,
                         lhs_g, rhs_g, rep.fitted_C_grad))
    reports.write_csv(_out(cfg, "ergodic.csv"),
                      ("k", "t", "lhs_osc", "rhs_min", "argmin_R", "fitted_C", "fitted_c",
                       "lhs_grad", "rhs_grad_min", "fitted_C_grad"),
                      rows, _provenance(cfg))
    return EXIT_OK


def _cmd_poincare(cfg, fld, args):
    f = fld.entry_field(args.entry_i, args.entry_j)
    osc_val = heat.osc(f)
    rhs = heat.multiscale_poincare_rhs(f)
    rows = [("osc", osc_val), ("rhs", rhs), ("slack", rhs - osc_val)]
    reports.write_csv(_out(cfg, "poincare.csv"), ("quantity", "value"), rows, _provenance(cfg))
    return EXIT_OK if rhs >= osc_val - 1e-9 * max(1.0, abs(osc_val)) else EXIT_FLAGGED


def _cmd_hermite(cfg, fld, args):
    rows = []
    fitted = 0.0
    for n in range(args.nmax + 1):
        hval = heat.hermite(n, args.t)
        gval = heat.grad_heat_l1(n, args.t, args.d)
        envelope_C = (gval * args.t ** (n / 2.0)) ** (2.0 / n) / (1.0 + n) if n else 0.0
        fitted = max(fitted, envelope_C)
        rows.append((n, args.t, hval, gval, envelope_C))
    rows.append(("fitted_C", args.t, float("nan"), float("nan"), fitted))
    reports.write_csv(_out(cfg, "hermite.csv"),
                      ("n", "t", "hermite", "grad_heat_l1", "envelope_C"),
                      rows, _provenance(cfg))
    return EXIT_OK


def _cmd_corrector(cfg, fld, args):
    grid = _grid(args, fld.d)
    res = corrector.solve_corrector(fld, _unit_e(args.e, fld.d), args.eps, grid, args.tol)
    reports.write_json(_out(cfg, "corrector.json"), res.to_dict())
    reports.write_csv(_out(cfg, "corrector.csv"),
                      ("eps", "sup_phi", "sup_grad_phi", "mean_phi", "residual", "iters"),
                      [(res.eps, res.sup_phi, res.sup_grad_phi, res.mean_phi,
                        res.residual, res.solver_iters)], _provenance(cfg))
    if args.save_field:
        res.phi.save(_out(cfg, "corrector_phi"))
    return EXIT_OK


def _cmd_sweep(cfg, fld, args):
    grid = _grid(args, fld.d)
    rows = []
    sups = []
    for eps in cfg.knobs["eps_list"]:
        res = corrector.solve_corrector(fld, _unit_e(args.e, fld.d), eps, grid, args.tol)
        lip = corrector.lipschitz_report(res)
        sups.append(res.sup_phi)
        rows.append((eps, res.sup_phi, lip[0], lip[1], res.mean_phi, res.solver_iters))
    eps_arr = np.asarray(cfg.knobs["eps_list"])
    slope = float(np.polyfit(np.log(1.0 / eps_arr), np.log(sups), 1)[0])
    reports.write_csv(_out(cfg, "sweep.csv"),
                      ("eps", "sup_phi", "eps_sup_phi", "sup_grad_phi", "mean_phi", "iters"),
                      rows, _provenance(cfg) + f" plateau_slope={slope!r}")
    if cfg.plot:
        reports.emit_plot(_out(cfg, "sweep.svg"), [(1.0 / e, s) for e, s in zip(eps_arr, sups)],
                          kind="loglog", title="corrector sup vs 1/eps", xlabel="1/eps",
                          ylabel="sup|phi|")
    return EXIT_OK


def _cmd_psi_decay(cfg, fld, args):
    grid = _grid(args, fld.d)
    core = args.core_halfwidth if args.core_halfwidth > 0 else None
    rep = corrector.corrector_limit(fld, _unit_e(args.e, fld.d), cfg.knobs["eps_list"],
                                    grid, args.tol, core_halfwidth=core)
    rows = [(eps, sup) for eps, sup in rep.eps_table]
    prov = _provenance(cfg) + f" step_factor={rep.step_factor!r}"
    reports.write_csv(_out(cfg, "psi-decay.csv"), ("eps", "sup_psi"), rows, prov)
    if cfg.plot:
        reports.emit_plot(_out(cfg, "psi-decay.svg"), [(1.0 / e, s) for e, s in rows],
                          kind="loglog", title="dyadic psi decay", xlabel="1/eps", ylabel="sup|psi|")
    return EXIT_FLAGGED if rep.flagged else EXIT_OK


def _cmd_zeta_check(cfg, fld, args):
    grid = _grid(args, fld.d)
    rng = np.random.default_rng(args.seed)
    rows = []
    worst = 0.0
    for trial in range(args.trials):
        y = rng.uniform(-4.0, 4.0, size=fld.d)
        z = rng.uniform(-4.0, 4.0, size=fld.d)
        mis = corrector.difference_corrector_check(fld, y, z, _unit_e(args.e, fld.d),
                                                   args.eps, grid, args.tol)
        worst = max(worst, mis)
        rows.append((trial, float(y[0]), float(z[0]), mis))
    prov = _provenance(cfg) + f" worst_rel_mismatch={worst!r}"
    reports.write_csv(_out(cfg, "zeta-check.csv"), ("trial", "y0", "z0", "rel_mismatch"),
                      rows, prov)
    return EXIT_OK


def _cmd_effective(cfg, fld, args):
    grid = _grid(args, fld.d)
    em = homog.effective_matrix(fld, args.eps, grid, args.tol)
    lo, hi = em.eig_range()
    rows = []
    for i in range(fld.d):
        for j in range(fld.d):
            rows.append((i, j, float(em.abar[i, j])))
    reports.write_csv(_out(cfg, "effective.csv"), ("i", "j", "abar"), rows,
                      _provenance(cfg) + f" eig_lo={lo!r} eig_hi={hi!r}")
    reports.write_json(_out(cfg, "effective.json"),
                       {"abar": em.abar.tolist(), "residuals": list(em.residuals),
                        "eps": em.eps, "eig_range": [lo, hi]})
    return EXIT_OK


def _cmd_rate(cfg, fld, args):
    g = _boundary_data(args.g, fld.d)
    rep = homog.dirichlet_rate(fld, g, cfg.knobs["eps_list"], args.n_domain, args.tol)
    rows = [(eps, h, err, slope) for (eps, h, err, slope) in rep.rows]
    prov = _provenance(cfg) + f" slope={rep.slope!r} degenerate={rep.degenerate}"
    reports.write_csv(_out(cfg, "rate.csv"), ("eps", "h", "err_Linf", "slope_so_far"),
                      rows, prov)
    if cfg.plot:
        reports.emit_plot(_out(cfg, "rate.svg"), [(e, max(err, 1e-300)) for e, _, err, _ in rows],
                          kind="loglog", title="homogenization error vs eps",
                          xlabel="eps", ylabel="Linf error")
    return EXIT_OK


def _unit_e(spec, d):
    e = np.zeros(d)
    idx = int(spec)
    if not 0 <= idx < d:
        raise ValueError(f"direction index {idx} out of range for d={d}")
    e[idx] = 1.0
    return e


def _boundary_data(name, d):
    if name == "linear":
        return lambda pts: pts[:, 0]
    if name == "quadratic":
        return lambda pts: pts[:, 0] + 0.5 * (pts ** 2).sum(axis=1)
    raise ValueError(f"unknown boundary data {name!r} (use linear or quadratic)")


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser():
    parser = argparse.ArgumentParser(prog="aphomog", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p, needs_spec=True):
        if needs_spec:
            p.add_argument("--spec", required=True, help="field spec TOML")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--plot", action="store_true", help="also emit an SVG plot")

    def sampler_args(p):
        p.add_argument("--base-res", type=int, default=64)
        p.add_argument("--y-res", type=int, default=16)
        p.add_argument("--z-res", type=int, default=64)
        p.add_argument("--gs-iters", type=int, default=40)

    def grid_args(p):
        p.add_argument("--L", type=float, required=True)
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--e", default="0", help="unit direction index")

    p = sub.add_parser("field-check")
    common(p)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--zmax", type=int, default=100)
    p.add_argument("--jmax", type=int, default=3)

    p = sub.add_parser("sigma")
    common(p)
    p.add_argument("--R-list", required=True)
    p.add_argument("--y-res", type=int, default=64)
    p.add_argument("--z-res", type=int, default=64)
    p.add_argument("--z-res-scale", type=float, default=0.0,
                   help="if > 0, use z_res = max(z_res, scale * R)")
    p.add_argument("--gs-iters", type=int, default=40)

    for name in ("rho", "omega"):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--k", type=int, default=1)
        p.add_argument("--R-list", required=True)
        sampler_args(p)

    p = sub.add_parser("rho-star")
    common(p)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--C", type=float, default=2.0)
    p.add_argument("--kmax", type=int, default=2)
    sampler_args(p)

    p = sub.add_parser("ergodic")
    common(p)
    p.add_argument("--k-list", default="1")
    p.add_argument("--t-list", required=True)
    p.add_argument("--R-list", required=True)
    p.add_argument("--entry-i", type=int, default=0)
    p.add_argument("--entry-j", type=int, default=0)
    sampler_args(p)

    p = sub.add_parser("poincare")
    common(p)
    p.add_argument("--entry-i", type=int, default=0)
    p.add_argument("--entry-j", type=int, default=0)

    p = sub.add_parser("hermite")
    common(p, needs_spec=False)
    p.add_argument("--nmax", type=int, default=8)
    p.add_argument("--t", type=float, default=0.25)
    p.add_argument("--d", type=int, default=1)

    p = sub.add_parser("corrector")
    common(p)
    grid_args(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--save-field", action="store_true")

    p = sub.add_parser("sweep")
    common(p)
    grid_args(p)
    p.add_argument("--eps-list", required=True)

    p = sub.add_parser("psi-decay")
    common(p)
    grid_args(p)
    p.add_argument("--eps-list", required=True)
    p.add_argument("--core-halfwidth", type=float, default=0.0)

    p = sub.add_parser("zeta-check")
    common(p)
    grid_args(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("effective")
    common(p)
    grid_args(p)
    p.add_argument("--eps", type=float, required=True)

    p = sub.add_parser("rate")
    common(p)
    p.add_argument("--eps-list", required=True)
    p.add_argument("--n-domain", type=int, default=1024)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--g", default="linear")

    return parser


_BODIES = {
    "field-check": _cmd_field_check,
    "sigma": _cmd_sigma,
    "rho": lambda cfg, fld, args: _rho_like(cfg, fld, args, diffcalc.rho_k, "rho"),
    "omega": lambda cfg, fld, args: _rho_like(cfg, fld, args, diffcalc.omega_k, "omega"),
    "rho-star": _cmd_rho_star,
    "ergodic": _cmd_ergodic,
    "poincare": _cmd_poincare,
    "hermite": _cmd_hermite,
    "corrector": _cmd_corrector,
    "sweep": _cmd_sweep,
    "psi-decay": _cmd_psi_decay,
    "zeta-check": _cmd_zeta_check,
    "effective": _cmd_effective,
    "rate": _cmd_rate,
}


def run(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command is None or args.command not in COMMANDS:
        return EXIT_USAGE

    fld = None
    if getattr(args, "spec", None) is not None:
        try:
            fld = load_field_spec(args.spec)
        except (OSError, KeyError) as exc:
            print(f"error: cannot read spec: {exc}", file=sys.stderr)
            return EXIT_NOINPUT
        except ValueError as exc:
            print(f"error: invalid field spec: {exc}", file=sys.stderr)
            return EXIT_VALIDATION

    knobs = {}
    for name in ("R_list", "eps_list", "t_list", "k_list"):
        raw = getattr(args, name, None)
        if raw is not None:
            knobs[name] = _float_list(raw)
    for name in ("eps", "k", "tol", "L", "n", "R"):
        if getattr(args, name, None) is not None:
            knobs[name] = getattr(args, name)
    if fld is not None:
        knobs["d"] = fld.d
    cfg = ExperimentConfig(command=args.command, spec_path=getattr(args, "spec", None),
                           out_dir=args.out, knobs=knobs, plot=getattr(args, "plot", False))
    try:
        cfg.validate()
        os.makedirs(cfg.out_dir, exist_ok=True)
        return _BODIES[args.command](cfg, fld, args)
    except corrector.SolverNonConvergence as exc:
        print(f"error: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, ResonantWindingError, diffcalc.SearchGuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
