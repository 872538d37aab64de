"""The ``ddlab`` command line.

Exit codes: 0 on success, 2 for configuration errors (the message names the
offending key), 1 for runtime failures.
"""
from __future__ import annotations

import argparse
import math
import os
import sys


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _words(text):
    return [w.strip() for w in str(text).split(",") if w.strip()]


def _matrix_or_number(text):
    vals = _floats(text)
    if len(vals) == 1:
        return vals[0]
    if len(vals) == 4:
        return [vals[:2], vals[2:]]
    raise argparse.ArgumentTypeError("A takes one number or four comma-separated entries")


# flag -> (config section, key, converter, help)
CONFIG_FLAGS = {
    "--case": ("case", "id", str, "case id: A, B, C, D, E, CustomRobin, CustomDirichlet, CustomNeumann"),
    "--eps": ("case", "eps", _floats, "strictly decreasing interface widths, e.g. 0.5,0.25"),
    "--domain": ("case", "domain", str, "disk | square (default: square for case E, else disk)"),
    "--radius": ("case", "radius", float, "disk radius"),
    "--extension": ("case", "extension", str, "data extension outside D: normal | smooth"),
    "--reference": ("case", "reference", str, "manufactured | self"),
    "--solution": ("case", "solution", str, "manufactured solution for custom cases: trig | constant | poly"),
    "--A": ("case", "A", _matrix_or_number, "constant diffusion: a number or a11,a12,a21,a22"),
    "--c": ("case", "c", float, "reaction coefficient"),
    "--b": ("case", "b", float, "Robin coefficient"),
    "--sigma": ("case", "sigma", _floats, "penalty exponents for case D"),
    "--mu": ("case", "mu", _floats, "singularity exponents for case C"),
    "--angle": ("case", "angle", float, "polar angle of the singular point on the boundary"),
    "--k1": ("case", "k1", float, "inner layer diffusion (case B)"),
    "--k2": ("case", "k2", float, "outer layer diffusion (case B)"),
    "--r1-factor": ("case", "r1_factor", float, "layer radius as a fraction of R (case B)"),
    "--profile": ("phasefield", "profile", str, "linear | cubic | quintic"),
    "--gamma": ("mesh", "gamma", float, "mesh size factor, h = gamma * eps^2"),
    "--max-vertices": ("mesh", "max_vertices", int, "vertex cap per mesh"),
    "--band-depth": ("mesh", "band_depth", int, "quadrature subdivision depth in the band"),
    "--interface-depth": ("mesh", "interface_depth", int, "subdivision depth for norms on D"),
    "--tol": ("solver", "tol", float, "relative residual tolerance"),
    "--max-iter": ("solver", "max_iter", int, "CG iteration cap (0 = automatic)"),
    "--initial-guess": ("solver", "initial_guess", str, "zero | reference"),
    "--out": ("output", "dir", str, "output root directory"),
    "--formats": ("output", "formats", _words, "comma list of csv, json, plotdata"),
    "--norms": ("output", "norms", _words, "comma list of L2_D, W12_D, W11_D, W1inf_D"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _add_common(p):
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    p.add_argument("--seed", type=int, default=0, help="seed for sampled diagnostics")


def _add_config_flags(p):
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and stop")
    for flag, (_, _, conv, text) in CONFIG_FLAGS.items():
        p.add_argument(flag, type=conv, default=None, help=text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddlab", description="Diffuse domain method experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("integrals", help="diffuse vs sharp volume or surface integrals")
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--volume", action="store_true")
    kind.add_argument("--surface", action="store_true")
    p.add_argument("--h", default="const1",
                   help="integrand: const1 | caseA | singular | poly (see --mu, --angle, --coeffs)")
    p.add_argument("--profile", default="linear")
    p.add_argument("--domain", default="disk", help="disk | square")
    p.add_argument("--radius", type=float, default=math.sqrt(0.5))
    p.add_argument("--eps", type=_floats, default=[0.25, 0.125, 0.0625])
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--max-vertices", type=int, default=None)
    p.add_argument("--mu", type=float, default=0.5, help="exponent of the singular integrand")
    p.add_argument("--angle", type=float, default=1.0, help="polar angle of its pole")
    p.add_argument("--coeffs", type=_floats, default=[0, 0, 0, 1, 0, 1],
                   help="poly coefficients of 1, x, y, x^2, xy, y^2")
    _add_common(p)

    p = sub.add_parser("solve", help="one diffuse solve at the first eps of the config")
    _add_config_flags(p)
    _add_common(p)

    p = sub.add_parser("study", help="convergence study over the eps list")
    _add_config_flags(p)
    _add_common(p)

    p = sub.add_parser("properties", help="profile axioms and inequality constants")
    p.add_argument("what", choices=["profile", "trace", "poincare", "poincare-mean"])
    p.add_argument("--profile", default=None, help="profile name (default: all built-ins)")
    p.add_argument("--domain", default="disk")
    p.add_argument("--radius", type=float, default=math.sqrt(0.5))
    p.add_argument("--eps", type=_floats, default=[0.25, 0.125, 0.0625])
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--dense", action="store_true", help="dense eigensolve instead of power iteration")
    _add_common(p)

    p = sub.add_parser("mesh-dump", help="write the structured mesh used for a given eps")
    p.add_argument("--domain", default="disk")
    p.add_argument("--radius", type=float, default=math.sqrt(0.5))
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--output", required=True, help="destination file")
    _add_common(p)
    return parser


def _domain(kind, radius):
    from .errors import ConfigError
    from .geometry import Disk, Rectangle

    if kind == "disk":
        return Disk((0.0, 0.0), radius)
    if kind == "square":
        return Rectangle((0.0, 0.0), (1.0, 1.0))
    raise ConfigError(f"unknown domain {kind!r} (disk | square)", key="domain")


def named_field(name, args, domain):
    """Integrand by name: const1, caseA, singular or poly."""
    import numpy as np

    from .errors import ConfigError
    from .harness import boundary_point
    from .integrals import ScalarField, constant, singular_field

    if name == "const1":
        return constant(1.0)
    if name == "caseA":
        return ScalarField(lambda x, y: 10 * np.sin(np.pi * x) - 5 * y * y)
    if name == "singular":
        return singular_field(args.mu, boundary_point(domain, args.angle))
    if name == "poly":
        a = list(args.coeffs) + [0.0] * (6 - len(args.coeffs))
        if len(args.coeffs) > 6:
            raise ConfigError("poly takes at most six coefficients", key="coeffs")
        return ScalarField(lambda x, y: a[0] + a[1] * x + a[2] * y + a[3] * x * x
                           + a[4] * x * y + a[5] * y * y)
    raise ConfigError(f"unknown field {name!r} (const1 | caseA | singular | poly)", key="h")


def _cmd_integrals(args):
    from .geometry import Disk
    from .integrals import MeshPolicy, disk_volume_excess, surface_error_study, volume_error_study
    from .meshing import DEFAULT_MAX_VERTICES
    from .phasefield import get_profile

    profile = get_profile(args.profile)
    domain = _domain(args.domain, args.radius)
    field = named_field(args.h, args, domain)
    policy = MeshPolicy(args.gamma, 2.0, args.max_vertices or DEFAULT_MAX_VERTICES)
    study = (volume_error_study if args.volume else surface_error_study)(
        field, profile, domain, args.eps, policy)
    lines = study.to_csv().splitlines()
    closed = args.volume and args.h == "const1" and isinstance(domain, Disk)
    if closed:
        lines[0] += ",closed_form"
        for i, row in enumerate(study.rows, start=1):
            lines[i] += f",{disk_volume_excess(profile, domain.radius, row.eps):.15e}"
    elif args.surface and args.h == "const1":
        lines[0] += ",closed_form"
        lines[1:] = [line + ",0" for line in lines[1:]]
    print("\n".join(lines))
    return 0


def resolve_config(args):
    from .harness import CaseConfig

    cfg = CaseConfig.load(args.config) if args.config else CaseConfig()
    data = {s: dict(v) for s, v in cfg.sections.items()}
    for flag, (section, key, _, _) in CONFIG_FLAGS.items():
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            data[section][key] = value
    return CaseConfig.from_dict(data)


def _cmd_solve(args):
    from .fem import write_solution_csv
    from .harness import _solve, box_around, output_directory

    cfg = resolve_config(args)
    if args.dry_run:
        print(cfg.to_toml(), end="")
        return 0
    label, build, bc = next(iter(cfg.variants()))
    problem = build()
    eps = cfg.eps_list[0]
    mesh, system, u, res, scale = _solve(cfg, problem, bc, eps, box_around(cfg.domain, eps))
    out = output_directory(cfg)
    out.mkdir(parents=True)
    write_solution_csv(u, out / "solution.csv")
    (out / "config.resolved.toml").write_text(cfg.to_toml())
    print(f"eps={eps} dofs={system.n_dofs} iterations={u.iterations} "
          f"residual={u.residual:.3e} galerkin={res:.3e}/{scale:.3e}")
    if problem.reference is not None:
        from .analysis import restricted_errors
        errs = restricted_errors(u, problem.reference, cfg.domain, mesh, cfg.norms, cfg.quadrature)
        for k, v in errs.items():
            print(f"{k.value}: {v:.6e}")
    print(f"written {out / 'solution.csv'}")
    return 0


def _cmd_study(args):
    from .harness import StudyAborted, emit_results, output_directory, results_csv, run_case

    cfg = resolve_config(args)
    if args.dry_run:
        print(cfg.to_toml(), end="")
        return 0
    out = output_directory(cfg)
    formats = cfg.sections["output"]["formats"]
    try:
        result = run_case(cfg)
    except StudyAborted as exc:
        emit_results(exc.partial, out, formats, cfg)
        print(f"partial results in {out}", file=sys.stderr)
        raise
    emit_results(result, out, formats, cfg)
    print(results_csv(result), end="")
    print(f"written {out}")
    return 0


def _cmd_properties(args):
    from .analysis import (discrete_poincare_friedrichs_constant, discrete_poincare_mean_constant,
                           discrete_trace_constant, generalized_power_iteration,
                           inequality_matrices)
    from .geometry import box_around
    from .integrals import check_eps_list
    from .meshing import build_structured_mesh
    from .phasefield import PROFILES, PhaseField, get_profile, verify_profile

    if args.what == "profile":
        profiles = [get_profile(args.profile)] if args.profile else list(PROFILES.values())
        ok = True
        for prof in profiles:
            rep = verify_profile(prof, args.samples)
            ok &= rep.ok
            flags = " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in rep.passed.items())
            print(f"{prof.name}: alpha={prof.alpha:g} zeta1={prof.zeta1:g} "
                  f"zeta2={prof.zeta2:g} {flags}")
        return 0 if ok else 1

    profile = get_profile(args.profile or "linear")
    domain = _domain(args.domain, args.radius)
    eps_list = check_eps_list(args.eps, domain)
    box = box_around(domain, eps_list[0])
    print("eps,dofs,constant")
    for eps in eps_list:
        pf = PhaseField(profile, eps, domain)
        mesh = build_structured_mesh(box, args.gamma * eps * eps)
        mats = inequality_matrices(mesh, pf)
        if args.dense:
            fn = {"trace": discrete_trace_constant, "poincare": discrete_poincare_friedrichs_constant,
                  "poincare-mean": discrete_poincare_mean_constant}[args.what]
            value = fn(mesh, pf, dense=True, mats=mats)
        else:
            if args.what == "trace":
                P, Q, defl = mats.boundary, mats.stiffness + mats.mass, None
            elif args.what == "poincare":
                P, Q, defl = mats.mass, mats.stiffness + mats.boundary, None
            else:
                P, Q, defl = mats.mass, mats.stiffness, mats.mean
            value = generalized_power_iteration(P, Q.tocsr(), deflate=defl, seed=args.seed).value
        print(f"{eps!r},{mats.mass.shape[0]},{value:.10e}")
    return 0


def _cmd_mesh_dump(args):
    from .geometry import box_around, check_eps
    from .meshing import build_structured_mesh, write_mesh

    domain = _domain(args.domain, args.radius)
    check_eps(domain, args.eps)
    mesh = build_structured_mesh(box_around(domain, args.eps), args.gamma * args.eps**2)
    write_mesh(mesh, args.output)
    print(f"{mesh.n_vertices} vertices, {mesh.n_triangles} triangles -> {args.output}")
    return 0


COMMANDS = {"integrals": _cmd_integrals, "solve": _cmd_solve, "study": _cmd_study,
            "properties": _cmd_properties, "mesh-dump": _cmd_mesh_dump}


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"ddlab: config error: {exc}", file=sys.stderr)
        return 2
    if args.threads is not None:
        if args.threads < 1:
            print("ddlab: config error [threads]: must be >= 1", file=sys.stderr)
            return 2
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .errors import ConfigError, DDLabError

    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"ddlab: config error{key}: {exc}", file=sys.stderr)
        return 2
    except DDLabError as exc:
        print(f"ddlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ddlab: I/O error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    sys.exit(parse_and_dispatch(argv))


if __name__ == "__main__":
    main()
