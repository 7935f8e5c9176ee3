"""Command line front end.

Subcommands: generate-mesh, run, convergence, cavity-demo, selftest. Options
may come from a JSON config file (--config); explicit flags win over config
values, which win over built-in defaults. Exit codes: 0 on success, 2 for
configuration or validation problems, 3 for solver or numeric failures.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .assembly import (AssemblyError, BoundaryData, CondensationError,
                       SolverError, assemble, condense, solve)
from .cases import CaseError, get_case
from .localops import (CoefficientError, CoefficientField, SchemeConfig,
                       build_operator_sets)
from .mesh import MeshError, generate_cartesian, generate_polygonal, \
    load_mesh, save_mesh, validate
from .polyspace import check_poly_decomposition
from .reporting import (format_flux_csv, render_convergence_figure,
                        render_flux_figure, solution_dump,
                        write_convergence_csv, write_json)
from .verification import (CavityProblem, VerificationError,
                           convergence_study, energy_norm, error_report,
                           pressure_l2_norm, solve_case)

_GEN_KINDS = ("cartesian", "perturbed-quad", "agglomerated", "triangular")


def _load_config_file(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise CaseError("config file must hold a JSON object")
    return data


class _Options:
    """Flag > config-file > default resolution for one subcommand."""

    def __init__(self, args, config):
        self.args = vars(args)
        self.config = config

    def get(self, key, default=None):
        val = self.args.get(key)
        if val is None:
            val = self.config.get(key, default)
        return val


def _parse_levels(text):
    try:
        levels = [int(tok) for tok in str(text).split(",") if tok != ""]
    except ValueError:
        raise CaseError(f"cannot parse levels '{text}'")
    if not levels:
        raise CaseError("empty level list")
    return levels


def _scheme_config(opt, k=None):
    if k is None:
        k = int(opt.get("k", 0))
    stab_darcy = opt.get("stab_darcy", 0.3)
    if stab_darcy == "preset":
        stab_darcy = SchemeConfig.darcy_stab_preset(k)
    cfg = SchemeConfig(
        k=k,
        stab_stokes=float(opt.get("stab_stokes", 3.0)),
        stab_darcy=float(stab_darcy),
        eps=float(opt.get("eps", 1e-14)),
        condense=bool(opt.get("condense", True)),
        solver=str(opt.get("solver", "direct")),
    )
    orth = opt.get("orthonormalize")
    if orth is not None:
        cfg.orthonormalize = bool(orth)
    return cfg


def _build_mesh(opt):
    path = opt.get("mesh")
    if path is not None:
        return load_mesh(path)
    kind = opt.get("kind", "cartesian")
    n = int(opt.get("n", 8))
    if kind == "cartesian":
        return generate_cartesian(n)
    if kind in _GEN_KINDS:
        return generate_polygonal(n, kind, seed=int(opt.get("seed", 0)))
    raise MeshError(f"unknown mesh kind '{kind}'")


def _case_from(opt):
    name = opt.get("case", "blend")
    if name == "none":
        return None
    cf = opt.get("cf")
    return get_case(name, k=int(opt.get("k", 0)),
                    cf_omega=None if cf is None else float(cf),
                    mu=opt.get("mu"), nu=opt.get("nu"))


def cmd_generate_mesh(args, config):
    opt = _Options(args, config)
    mesh = _build_mesh(opt)
    report = validate(mesh)
    if report.violations:
        raise MeshError("generated mesh fails validation: "
                        + report.violations[0])
    out = opt.get("out", "mesh.json")
    save_mesh(mesh, out)
    print(f"wrote {out}: {mesh.n_elements} cells, {mesh.n_faces} faces, "
          f"h={mesh.h:.6g}")
    return 0


def _run_without_case(mesh, opt, config, out_dir):
    mu = float(opt.get("mu", 1.0))
    nu = float(opt.get("nu", 1.0))
    coeffs = CoefficientField.constant(mesh, mu, nu, eps=config.eps)
    ops = build_operator_sets(mesh, coeffs, config)
    system = assemble(mesh, coeffs, None, None, BoundaryData.homogeneous(),
                      config, ops=ops)
    target = condense(system) if config.condense else system
    solution = solve(target)
    layout = system.layout
    report = {
        "velocity_energy_norm": energy_norm(mesh, ops, layout,
                                            solution.velocity),
        "pressure_l2_norm": pressure_l2_norm(mesh, ops, solution.pressure),
        "residual": solution.residual,
        "n_solved": solution.n_solved,
    }
    write_json(solution_dump(mesh, ops, layout, solution),
               os.path.join(out_dir, "solution.json"))
    write_json(report, os.path.join(out_dir, "report.json"))
    print(f"zero-data run: |u_h| = {report['velocity_energy_norm']:.3e}, "
          f"|p_h| = {report['pressure_l2_norm']:.3e}")
    return 0


def cmd_run(args, config):
    opt = _Options(args, config)
    scheme = _scheme_config(opt)
    mesh = _build_mesh(opt)
    out_dir = opt.get("out", ".")
    os.makedirs(out_dir, exist_ok=True)
    case = _case_from(opt)
    if case is None:
        return _run_without_case(mesh, opt, scheme, out_dir)

    coeffs = case.coefficient_field(mesh, eps=scheme.eps)
    t0 = time.perf_counter()
    ops = build_operator_sets(mesh, coeffs, scheme)
    boundary = case.boundary_data(mesh, ops)
    system = assemble(mesh, coeffs, case.f, case.g, boundary, scheme,
                      ops=ops)
    target = condense(system) if scheme.condense else system
    t1 = time.perf_counter()
    solution = solve(target)
    t2 = time.perf_counter()
    rep = error_report(mesh, ops, system.layout, solution, case,
                       time_assembly=t1 - t0, time_solve=t2 - t1)
    write_json(solution_dump(mesh, ops, system.layout, solution),
               os.path.join(out_dir, "solution.json"))
    write_json({
        "case": case.name,
        "h": rep.h,
        "n_elements": rep.n_elements,
        "condensed_dofs": rep.condensed_dofs,
        "error": rep.error,
        "error_velocity": rep.error_velocity,
        "error_pressure": rep.error_pressure,
        "time_assembly": rep.time_assembly,
        "time_solve": rep.time_solve,
        "regimes": coeffs.census(),
    }, os.path.join(out_dir, "report.json"))
    print(f"{case.name}: h={rep.h:.4g} E={rep.error:.6e} "
          f"(velocity {rep.error_velocity:.3e}, "
          f"pressure {rep.error_pressure:.3e})")
    return 0


def cmd_convergence(args, config):
    opt = _Options(args, config)
    scheme = _scheme_config(opt)
    case = _case_from(opt)
    if case is None:
        raise CaseError("convergence study needs a manufactured case")
    kind = opt.get("kind", "cartesian")
    levels = _parse_levels(opt.get("levels", "4,8,16,32"))
    if len(levels) < 3:
        raise CaseError("need at least 3 refinement levels")
    seed = int(opt.get("seed", 0))
    if kind == "cartesian":
        meshes = [generate_cartesian(n) for n in levels]
    elif kind in _GEN_KINDS:
        meshes = [generate_polygonal(n, kind, seed=seed) for n in levels]
    else:
        raise MeshError(f"unknown mesh kind '{kind}'")

    workers = int(opt.get("workers", 1))
    table = convergence_study(case, meshes, scheme, workers=workers,
                              with_condition=bool(opt.get("condition",
                                                          False)))
    out_dir = opt.get("out", ".")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "convergence.csv")
    write_convergence_csv(table, csv_path)
    fig_path = os.path.join(out_dir, "convergence.png")
    render_convergence_figure([table], fig_path,
                              title=f"{case.name}, k={scheme.k}, {kind}")
    for rep in table.reports:
        rate = "-" if rep.rate is None else f"{rep.rate:.3f}"
        print(f"h={rep.h:.5g} E={rep.error:.6e} rate={rate}")
    if table.failure is not None:
        print(f"study aborted: {table.failure}", file=sys.stderr)
        return 3
    print(f"wrote {csv_path} and {fig_path}")
    return 0


def cmd_cavity_demo(args, config):
    opt = _Options(args, config)
    levels = _parse_levels(opt.get("levels", "4,8"))
    orders = _parse_levels(opt.get("orders", str(opt.get("k", 1))))
    out_dir = opt.get("out", ".")
    os.makedirs(out_dir, exist_ok=True)
    series = {}
    last = None
    for k in orders:
        scheme = _scheme_config(opt, k=k)
        rows = []
        hs, fluxes = [], []
        for n in levels:
            problem = CavityProblem(n)
            flux, solution, ops, layout, info = problem.solve(scheme)
            rows.append((info["h"], info["n_elements"],
                         info["condensed_dofs"], flux, info["far_velocity"],
                         info["time_assembly"], info["time_solve"]))
            hs.append(info["h"])
            fluxes.append(flux)
            last = (problem, solution, ops, layout)
            print(f"k={k} n={n}: flux={flux:.8e} "
                  f"far-velocity={info['far_velocity']:.3e}")
        series[k] = (hs, fluxes)
        path = os.path.join(out_dir, f"cavity_k{k}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_flux_csv(rows))
    render_flux_figure(series, os.path.join(out_dir, "cavity_flux.png"),
                       title="cavity interface flux")
    problem, solution, ops, layout = last
    write_json(solution_dump(problem.mesh, ops, layout, solution),
               os.path.join(out_dir, "cavity_solution.json"))
    print(f"wrote cavity outputs to {out_dir}")
    return 0


def _selftest_checks():
    from .cases import darcy_polynomial, discontinuous, regime_blend

    yield "mesh families validate", lambda: all(
        not validate(m).violations for m in [
            generate_cartesian(4),
            generate_polygonal(4, "perturbed-quad", seed=1),
            generate_polygonal(4, "agglomerated"),
            generate_polygonal(3, "triangular")])

    def poly_decomposition():
        mesh = generate_polygonal(4, "agglomerated")
        rep = check_poly_decomposition(mesh, mesh.elements[0], 2)
        return (rep["dim_grad"] + rep["dim_rot"] == rep["dim_total"]
                and rep["sigma_min"] > 1e-8)
    yield "degree-2 gradient/rot decomposition", poly_decomposition

    def case_checks():
        worst = 0.0
        for case in [regime_blend(cf_omega=1.0), regime_blend(cf_omega=0.0),
                     regime_blend(cf_omega=np.inf), discontinuous(),
                     darcy_polynomial(1)]:
            worst = max(worst, max(case.self_check(n=60).values()))
        return worst <= 1e-10
    yield "manufactured case self-consistency", case_checks

    def exactness():
        from .cases import stokes_polynomial
        mesh = generate_polygonal(4, "agglomerated")
        for case in [stokes_polynomial(1), darcy_polynomial(1)]:
            rep, _ = solve_case(mesh, case, SchemeConfig(k=1))
            if rep.error > 1e-8:
                return False
        return True
    yield "polynomial exactness through the solver", exactness

    def regimes_solve():
        mesh = generate_cartesian(4)
        case = regime_blend(cf_omega=1.0)
        rep, _ = solve_case(mesh, case, SchemeConfig(k=0))
        return rep.error < 1.0
    yield "balanced-regime solve", regimes_solve


def cmd_selftest(args, config):
    failures = 0
    for name, check in _selftest_checks():
        try:
            ok = bool(check())
        except Exception as exc:  # noqa: BLE001 - reported below
            ok = False
            print(f"FAIL {name}: {exc}")
        else:
            print(("PASS " if ok else "FAIL ") + name)
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} selftest check(s) failed", file=sys.stderr)
        return 3
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="brinkman2d",
        description="Regime-robust polygonal solver for the 2D Brinkman "
                    "problem")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with option defaults")
        p.add_argument("--k", type=int, help="polynomial degree (>= 0)")
        p.add_argument("--stab-stokes", dest="stab_stokes", type=float)
        p.add_argument("--stab-darcy", dest="stab_darcy",
                       help="float or 'preset' for 10^-(k+1)")
        p.add_argument("--eps", type=float)
        p.add_argument("--condense", action=argparse.BooleanOptionalAction,
                       default=None)
        p.add_argument("--orthonormalize",
                       action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--solver", choices=["direct", "minres"])
        p.add_argument("--out")
        p.add_argument("--seed", type=int)

    g = sub.add_parser("generate-mesh", help="write a mesh JSON file")
    g.add_argument("--config")
    g.add_argument("--kind", choices=_GEN_KINDS)
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate_mesh)

    r = sub.add_parser("run", help="single solve with solution export")
    common(r)
    r.add_argument("--case",
                   choices=["blend", "discontinuous", "stokes-poly",
                            "darcy-poly", "none"])
    r.add_argument("--cf", help="global friction number for the blend case")
    r.add_argument("--mu", type=float)
    r.add_argument("--nu", type=float)
    r.add_argument("--mesh", help="mesh JSON file (overrides --kind/--n)")
    r.add_argument("--kind", choices=_GEN_KINDS)
    r.add_argument("--n", type=int)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("convergence", help="mesh-family convergence study")
    common(c)
    c.add_argument("--case",
                   choices=["blend", "discontinuous", "stokes-poly",
                            "darcy-poly"])
    c.add_argument("--cf")
    c.add_argument("--mu", type=float)
    c.add_argument("--nu", type=float)
    c.add_argument("--kind", choices=_GEN_KINDS)
    c.add_argument("--levels", help="comma list of grid resolutions")
    c.add_argument("--workers", type=int)
    c.add_argument("--condition", action=argparse.BooleanOptionalAction,
                   default=None)
    c.set_defaults(func=cmd_convergence)

    v = sub.add_parser("cavity-demo",
                       help="lid-driven cavity in a porous box")
    common(v)
    v.add_argument("--levels", help="comma list of n (multiples of 4)")
    v.add_argument("--orders", help="comma list of polynomial degrees")
    v.set_defaults(func=cmd_cavity_demo)

    s = sub.add_parser("selftest", help="run built-in invariant checks")
    s.add_argument("--config")
    s.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config_file(getattr(args, "config", None))
        return args.func(args, config)
    except (MeshError, CaseError, CoefficientError, AssemblyError,
            VerificationError, FileNotFoundError, IsADirectoryError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, CondensationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
