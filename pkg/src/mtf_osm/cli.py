"""Command-line front end: ``mesh``, ``solve``, ``verify`` and ``study``.

Configuration is a flat ``key = value`` file (``#`` starts a comment);
command-line flags override file entries.  See ``docs/config.md`` for the
schema.  Exit codes: 0 success, 1 usage error, 2 numerical failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .exchange import RankDeficiencyError
from .fem import CoefficientField, SingularSystemError, l2_error, l2_norm, local_mesh
from .local_solver import energy_flux, robin_minus, robin_plus
from .mesh import (
    Mesh,
    MeshError,
    extract_skeleton,
    generate_partitioned_disk,
    generate_partitioned_square,
    load_mesh,
    save_mesh,
)
from .potentials import skeleton_green_traces, verify_representation
from .skeleton_solver import (
    MAX_DENSE_DOFS,
    SkeletonSystem,
    estimate_coercivity,
    gmres,
    monolithic_reference,
    rayleigh_quotients,
    reconstruct,
    richardson,
)
from .traces import corrupted_single_trace_map, multitrace_norm, polarity_residual

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3
REPORT_KEYS = ("config", "iterations", "residuals", "alpha_est", "timings", "version")


class UsageError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _complexes(text):
    return [complex(v.strip().replace(" ", "")) for v in str(text).split(",") if v.strip()]


@dataclass
class RunConfig:
    """All run parameters; every field can be set in the config file."""

    mesh: str = "disk"  # disk | square | path to a mesh file
    n_sectors: int = 3
    r_skeleton: float = 1.0
    r_outer: float = 2.0
    h: float = 0.1
    square_n: int = 16
    split: str = "vertical"
    kappa0: float = 3.0
    mu: str = "1"
    kappa: str = "3"
    source: str = "gaussian"  # none | gaussian
    source_center: str = "0.3,0.2"
    source_width: float = 0.2
    source_amplitude: float = 1.0
    incident: str = "none"  # none | plane_wave
    incident_angle: float = 0.0
    gamma: float = 0.0  # 0 selects 1 / kappa0
    omega: float = 0.0  # 0 selects kappa0
    closure: str = "robin"
    solver: str = "gmres"
    form: str = "product"
    beta: float = 0.5
    tol: float = 1e-10
    maxit: int = 2000
    restart: int = 200
    alpha: str = "auto"  # auto | dense | lanczos | none
    n_probe: int = 20
    seed: int = 0
    fault: str = "none"  # none | corrupt_restriction
    ladder: str = "beta"  # beta | omega | h
    values: str = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    record_timings: bool = True
    out: str = "out"

    def validate(self):
        positive = ["r_skeleton", "r_outer", "h", "kappa0", "source_width", "tol"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        for name in ("gamma", "omega"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be positive (0 selects the default)")
        if self.n_sectors < 1 or self.square_n < 2 or self.maxit < 0 or self.restart < 1:
            raise UsageError("mesh sizes and iteration limits must be positive")
        if not 0 < self.beta < 1:
            raise UsageError("beta must lie in (0, 1)")
        choices = {
            "solver": ("richardson", "gmres"),
            "form": ("product", "difference"),
            "closure": ("robin", "bessel"),
            "source": ("none", "gaussian"),
            "incident": ("none", "plane_wave"),
            "alpha": ("auto", "dense", "lanczos", "none"),
            "fault": ("none", "corrupt_restriction"),
            "ladder": ("beta", "omega", "h"),
            "split": ("vertical", "diagonal"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise UsageError(f"{name} must be one of {allowed}")
        try:
            _floats(self.mu)
            _complexes(self.kappa)
            _floats(self.source_center)
            _floats(self.values)
        except ValueError as exc:
            raise UsageError(f"malformed list value: {exc}") from None
        return self

    def echo(self):
        return asdict(self)


def _coerce(name, raw, typ):
    try:
        if typ is bool or typ == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise UsageError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text):
    """``key = value`` lines into a dict of strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


def build_config(entries: dict) -> RunConfig:
    cfg = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    for key, raw in entries.items():
        if key not in types:
            raise UsageError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, str(raw), types[key]))
    return cfg.validate()


# ---------------------------------------------------------------------------
# Problem setup
# ---------------------------------------------------------------------------
def make_mesh(cfg: RunConfig) -> Mesh:
    if cfg.mesh == "disk":
        return generate_partitioned_disk(cfg.n_sectors, cfg.r_skeleton, cfg.r_outer, cfg.h)
    if cfg.mesh == "square":
        return generate_partitioned_square(cfg.square_n, split=cfg.split)
    try:
        return load_mesh(cfg.mesh)
    except OSError as exc:
        raise UsageError(f"cannot read mesh: {exc}") from None


def plane_wave(kappa, angle):
    d = np.array([np.cos(angle), np.sin(angle)])

    def u(xy):
        return np.exp(1j * kappa * (np.asarray(xy) @ d))

    def outer(xy, normal):
        # mu du/dn - i kappa0 u with mu = 1
        return 1j * kappa * (np.asarray(normal) @ d) * u(xy) - 1j * kappa * u(xy)

    return u, outer


def make_coefficients(cfg: RunConfig, n_sub: int):
    """Piecewise-constant medium; lists shorter than the subdomain count are cycled."""
    mu = _floats(cfg.mu)
    kappa = _complexes(cfg.kappa)
    mu = [mu[j % len(mu)] for j in range(n_sub)]
    kappa = [kappa[j % len(kappa)] for j in range(n_sub)]
    exact = None
    source = None
    outer = None
    if cfg.incident == "plane_wave":
        if len(set(mu)) > 1 or len(set(kappa)) > 1 or mu[0] != 1.0 or kappa[0] != cfg.kappa0:
            raise UsageError("plane_wave needs a homogeneous medium with mu = 1 and kappa = kappa0")
        exact, outer = plane_wave(cfg.kappa0, cfg.incident_angle)
    if cfg.source == "gaussian":
        c = np.array(_floats(cfg.source_center))
        w, a = cfg.source_width, cfg.source_amplitude

        def source(xy):
            r2 = np.sum((np.asarray(xy) - c) ** 2, axis=1)
            return a * np.exp(-r2 / w**2)

        if exact is not None:
            raise UsageError("plane_wave data cannot be combined with a volume source")
    coeffs = CoefficientField.piecewise_constant(mu, kappa, cfg.kappa0, source=source, outer_data=outer)
    return coeffs, exact


def make_system(cfg: RunConfig, mesh=None):
    mesh = make_mesh(cfg) if mesh is None else mesh
    coeffs, exact = make_coefficients(cfg, mesh.n_subdomains)
    stm = None
    if cfg.fault == "corrupt_restriction":
        stm = corrupted_single_trace_map(extract_skeleton(mesh), cfg.seed)
    sys_ = SkeletonSystem(
        mesh, coeffs, gamma=cfg.gamma or None, omega=cfg.omega or None, closure=cfg.closure, stm=stm
    )
    return sys_, coeffs, exact


def _alpha(cfg, sys_):
    method = cfg.alpha
    if method == "none":
        return None
    if method == "auto":
        method = "dense" if sys_.size <= MAX_DENSE_DOFS else "lanczos"
    return estimate_coercivity(sys_, method)


def _solve(cfg, sys_, reference=None, alpha=None):
    if cfg.solver == "richardson":
        return richardson(sys_, cfg.beta, cfg.tol, cfg.maxit, reference=reference, alpha=alpha)
    p, rep = gmres(sys_, cfg.tol, cfg.maxit, cfg.restart, cfg.form)
    rep.alpha_est = alpha
    return p, rep


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------
def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _table(rows, header):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_mesh(cfg: RunConfig, out: Path):
    mesh = make_mesh(cfg)
    sk = extract_skeleton(mesh)
    save_mesh(mesh, out / "mesh.txt")
    rows = []
    for j in range(mesh.n_subdomains):
        rows.append([j, int(np.sum(mesh.subdomain_of_triangle == j)), sk.block_sizes[j]])
    write_csv(out / "partition.csv", ["subdomain", "triangles", "boundary_vertices"], rows)
    print(f"vertices: {len(mesh.vertices)}  triangles: {len(mesh.triangles)}  subdomains: {mesh.n_subdomains}")
    print(f"skeleton vertices: {len(sk.skeleton_vertices)}  trace dofs: {sk.n_trace_dofs}")
    print(f"cross points: {len(sk.cross_points)}  interior cross points: {len(sk.interior_cross_points())}")
    print(_table(rows, ["subdomain", "triangles", "boundary_vertices"]))
    stats = {
        "vertices": len(mesh.vertices),
        "triangles": len(mesh.triangles),
        "subdomains": mesh.n_subdomains,
        "skeleton_vertices": len(sk.skeleton_vertices),
        "trace_dofs": sk.n_trace_dofs,
        "cross_points": len(sk.cross_points),
        "interior_cross_points": len(sk.interior_cross_points()),
    }
    write_report(out, cfg, cfg.echo(), 0, {"mesh": stats}, None, {})
    return EXIT_OK


def cmd_solve(cfg: RunConfig, out: Path):
    t0 = time.perf_counter()
    sys_, coeffs, exact = make_system(cfg)
    t_build = time.perf_counter() - t0
    alpha = _alpha(cfg, sys_)
    t1 = time.perf_counter()
    p, rep = _solve(cfg, sys_, alpha=alpha)
    t_solve = time.perf_counter() - t1
    rec = reconstruct(sys_, p)
    lm, u_ref = monolithic_reference(sys_.mesh, coeffs)
    ref_norm = l2_norm(lm, u_ref)
    diff = l2_norm(lm, rec.global_field - u_ref) / ref_norm if ref_norm > 0 else l2_norm(lm, rec.global_field)
    residuals = {
        "history": rep.residuals,
        "final": rep.residuals[-1] if rep.residuals else 0.0,
        "converged": rep.converged,
        "breakdown": rep.breakdown,
        "interface_jump": rec.interface_jump,
        "neumann_balance": rec.neumann_balance,
        "monolithic_rel_l2": diff,
    }
    if exact is not None:
        residuals["exact_rel_l2"] = l2_error(lm, rec.global_field, exact) / l2_norm(lm, exact(lm.vertices))
    cfg_echo = {**cfg.echo(), **{f"resolved_{k}": v for k, v in sys_.config().items()}}
    write_csv(
        out / "solution.csv",
        ["vertex", "re_u", "im_u"],
        [[i, float(z.real), float(z.imag)] for i, z in enumerate(rec.global_field)],
    )
    write_report(out, cfg, cfg_echo, rep.iterations, residuals, alpha,
                 {"build": t_build, "solve": t_solve, "total": time.perf_counter() - t0})
    print(f"solver: {cfg.solver}  iterations: {rep.iterations}  converged: {rep.converged}")
    print(f"final relative residual: {residuals['final']:.3e}  alpha_est: {alpha}")
    print(f"relative L2 difference to monolithic solve: {diff:.3e}")
    if not rep.converged:
        raise NumericalFailure("solver did not converge")
    return EXIT_OK


def write_report(out, cfg, cfg_echo, iterations, residuals, alpha, timings):
    """``report.json`` with the fixed key set; timings are omitted when disabled."""
    report = {
        "config": cfg_echo,
        "iterations": iterations,
        "residuals": residuals,
        "alpha_est": alpha,
        "timings": timings if cfg.record_timings else {},
        "version": __version__,
    }
    assert tuple(sorted(report)) == tuple(sorted(REPORT_KEYS))
    text = json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"
    (out / "report.json").write_text(text, encoding="utf-8")


def verification_suite(cfg: RunConfig, sys_: SkeletonSystem):
    """Run the invariant checks; returns rows ``(name, value, tolerance, passed)``."""
    rng = np.random.default_rng(cfg.seed)
    n = sys_.size
    ex, dtn, sk = sys_.exchange, sys_.dtn, sys_.skeleton
    rows = []

    def add(name, value, tol):
        rows.append((name, float(value), tol, bool(value <= tol)))

    ps = [rng.standard_normal(n) + 1j * rng.standard_normal(n) for _ in range(cfg.n_probe)]
    norms = [multitrace_norm(p, dtn) for p in ps]
    add("pi_involution", max(np.linalg.norm(ex.apply(ex.apply(p)) - p) / np.linalg.norm(p) for p in ps), 1e-12)
    add("pi_isometry", max(abs(multitrace_norm(ex.apply(p), dtn) - m) / m for p, m in zip(ps, norms)), 1e-10)

    # Single traces built from geometry alone (independent of the restriction map).
    src = np.array([2.5 * max(cfg.r_outer, 1.0), 0.37])
    u_dir, u_neu = skeleton_green_traces(sys_.mesh, sk, sys_.gamma, src)
    scale = max(np.abs(u_neu).max(), np.abs(u_dir).max())
    add("polarity", polarity_residual(u_dir, u_neu, sys_.stm) / scale, 1e-10)
    nn = multitrace_norm(u_neu, dtn)
    add("pi_fixes_neumann_single_traces", multitrace_norm(ex.apply(u_neu) - u_neu, dtn) / nn, 1e-10)
    tu = dtn.apply(u_dir)
    nt = multitrace_norm(tu, dtn)
    add("pi_negates_dirichlet_single_traces", multitrace_norm(ex.apply(tu) + tu, dtn) / nt, 1e-10)

    worst = 0.0
    for p, m in zip(ps, norms):
        q = p - ex.project(p)
        tr = ex.project(p)
        worst = max(worst, abs(np.vdot(dtn.whiten(tr), dtn.whiten(q))) / m**2,
                    np.abs(sys_.stm.adjoint(q)).max() / np.abs(p).max())
    add("orthogonal_decomposition", worst, 1e-10)

    add("contractivity_S", max(multitrace_norm(sys_.scattering.apply(p), dtn) / m - 1 for p, m in zip(ps, norms)), 1e-9)
    add("contractivity_PiS", max(multitrace_norm(ex.apply(sys_.scattering.apply(p)), dtn) / m - 1
                                 for p, m in zip(ps, norms)), 1e-9)

    flux, robin = -np.inf, 0.0
    for p in ps:
        for s, pj in zip(sys_.solvers, sk.split(p)):
            d, nu = s.traces(s.solve(h=pj))
            flux = max(flux, energy_flux(d, nu) / max(np.vdot(pj, pj).real, 1e-300))
            tm, tp = robin_minus(d, nu, s.t, s.omega), robin_plus(d, nu, s.t, s.omega)
            lhs = np.vdot(tp, np.linalg.solve(s.t, tp)).real - np.vdot(tm, np.linalg.solve(s.t, tm)).real
            rhs = 2 * s.omega * energy_flux(d, nu)
            robin = max(robin, abs(lhs - rhs) / max(abs(lhs), np.vdot(tm, np.linalg.solve(s.t, tm)).real))
    add("energy_flux", flux, 1e-9)
    add("robin_identity", robin, 1e-10)

    rq = rayleigh_quotients(sys_, cfg.n_probe, cfg.seed)
    add("numerical_range_right_half_plane", -rq.min(), 0.0)

    # Representation check on its own disk at diameter / 40, independent of the run mesh.
    r = cfg.r_skeleton
    disk = generate_partitioned_disk(1, r, 1.3 * r, r / 20)
    lm = local_mesh(disk, extract_skeleton(disk), 1)  # subdomain 0 is the annulus
    inside = r * np.array([[0.0, 0.0], [0.3, 0.2], [-0.5, 0.1]])
    outside = r * np.array([[1.6, 0.4], [-1.5, -1.0]])
    rep = verify_representation(lm, sys_.gamma, r * np.array([2.0, 0.5]), inside, outside)
    add("representation", rep["interior"], 1e-2)
    add("representation_exterior", rep["exterior"], 1e-2)
    return rows


def cmd_verify(cfg: RunConfig, out: Path):
    t0 = time.perf_counter()
    sys_, _, _ = make_system(cfg)
    rows = verification_suite(cfg, sys_)
    write_csv(out / "verify.csv", ["check", "value", "tolerance", "passed"],
              [[r[0], r[1], r[2], "pass" if r[3] else "FAIL"] for r in rows])
    print(_table([[r[0], f"{r[1]:.3e}", f"{r[2]:.0e}", "pass" if r[3] else "FAIL"] for r in rows],
                 ["check", "value", "tolerance", "result"]))
    ok = all(r[3] for r in rows)
    write_report(
        out, cfg, {**cfg.echo(), **{f"resolved_{k}": v for k, v in sys_.config().items()}},
        0, {r[0]: {"value": r[1], "tolerance": r[2], "passed": r[3]} for r in rows}, None,
        {"total": time.perf_counter() - t0},
    )
    print("all checks passed" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_study(cfg: RunConfig, out: Path):
    t0 = time.perf_counter()
    values = _floats(cfg.values)
    rows = []
    for v in values:
        run = RunConfig(**{**cfg.echo()})
        if cfg.ladder == "beta":
            run.beta = v
            run.solver = "richardson"
        elif cfg.ladder == "omega":
            run.omega = v
        else:
            run.h = v
            run.square_n = max(2, 2 * int(round(0.5 / v)))
        run.validate()
        sys_, coeffs, exact = make_system(run)
        alpha = _alpha(run, sys_)
        # Reference skeleton solution for error-based contraction factors.
        p_ref, _ = gmres(sys_, tol=1e-13, maxit=max(run.maxit, 4 * sys_.size), restart=run.restart)
        if run.solver == "richardson":
            p, rep = richardson(sys_, run.beta, run.tol, run.maxit, reference=p_ref, alpha=alpha)
        else:
            p, rep = _solve(run, sys_, alpha=alpha)
        contraction = float(np.max(rep.contraction)) if rep.contraction else float("nan")
        bound = (float(np.sqrt(max(0.0, 1 - alpha**2 * run.beta * (1 - run.beta))))
                 if alpha is not None and run.solver == "richardson" else float("nan"))
        rec = reconstruct(sys_, p)
        lm, u_ref = monolithic_reference(sys_.mesh, coeffs)
        if exact is not None:
            err = l2_error(lm, rec.global_field, exact) / l2_norm(lm, exact(lm.vertices))
        else:
            err = l2_norm(lm, rec.global_field - u_ref) / max(l2_norm(lm, u_ref), 1e-300)
        rows.append([cfg.ladder, v, rep.iterations, alpha if alpha is not None else float("nan"),
                     contraction, bound, err, rep.converged])
        print(f"{cfg.ladder}={v:g}: iterations={rep.iterations} alpha={alpha} contraction={contraction:.4f} "
              f"bound={bound:.4f} error={err:.3e}")
    header = ["parameter", "value", "iterations", "alpha_est", "contraction", "bound", "error", "converged"]
    write_csv(out / "study.csv", header, rows)
    write_report(
        out, cfg, cfg.echo(), int(sum(r[2] for r in rows)),
        {"rows": [dict(zip(header, r)) for r in rows]}, None, {"total": time.perf_counter() - t0},
    )
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "solve": cmd_solve, "verify": cmd_verify, "study": cmd_study}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def make_parser():
    ap = _Parser(prog="mtf-osm", description="Skeleton Helmholtz solver with a nonlocal exchange operator.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out", type=Path)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--solver", choices=["richardson", "gmres"])
    ap.add_argument("--beta", type=float)
    ap.add_argument("--omega", type=float)
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key")
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        entries = {}
        if args.config is not None:
            try:
                entries.update(parse_config_text(args.config.read_text(encoding="utf-8")))
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            entries[k.strip()] = v.strip()
        for key in ("out", "seed", "solver", "beta", "omega", "gamma"):
            val = getattr(args, key)
            if val is not None:
                entries[key] = str(val)
        if args.seed is not None and args.seed < 0:
            raise UsageError("seed must be non-negative")
        cfg = build_config(entries)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (UsageError, MeshError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, SingularSystemError, RankDeficiencyError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
