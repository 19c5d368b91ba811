"""Command-line driver: solve / adjoint / optimize / verify / gradcheck.

Configuration is flat key = value text with dotted section prefixes
(problem.*, optimizer.*, verify.*); unknown keys are rejected with the
offending line.  Exit codes: 0 ok, 2 config error, 3 stability error,
4 non-convergence or failed check, 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import math
import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .control import cost_from_state, gradient
from .fracop import Grid
from .optimize import OptimOptions, OptimResult, fixed_point, projected_gradient
from .pdesolve import (
    ControlField,
    SolverError,
    StabilityError,
    constant_control,
    export_control_csv,
    export_trajectory_csv,
    solve_adjoint,
    solve_state,
)
from .problem import ProblemSpec, bump_profile, eigen_profile
from .verify import SUITES, SuiteConfig, run_all


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    a: float = -1.0
    b: float = 1.0
    n: int = 127
    s: float = 0.5
    T: float = 0.5
    nt: int = 200
    omega_a: float = -0.5
    omega_b: float = 0.5
    alpha: float = 1.0
    m: float = -1.0
    M: float = 1.0
    rho0: str = "bump(0.1)"
    rhod: str = "bump(0.05)"


@dataclass
class OptimizerConfig:
    method: str = "pg"  # pg | fp
    max_iters: int = 200
    kkt_tol: float = 1e-8
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    sigma0: float | None = None  # "auto" in config text
    fp_damping: float = 1.0
    seed: int = 0
    c_user: float = 0.0


@dataclass
class VerifyBlockConfig:
    seed: int = 0
    suites: tuple = tuple(SUITES)
    mp_cases: int = 100
    estimate_cases: int = 50
    derivative_cases: int = 20
    lipschitz_pairs: int = 50
    vi_samples: int = 100
    coercivity_samples: int = 64
    growth_samples: int = 50
    starts: int = 8


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    verify: VerifyBlockConfig = field(default_factory=VerifyBlockConfig)


_SECTIONS = {"problem": ProblemConfig, "optimizer": OptimizerConfig,
             "verify": VerifyBlockConfig}


def _parse_value(section: str, name: str, text: str, lineno: int):
    text = text.strip()
    try:
        if section == "optimizer" and name == "sigma0":
            return None if text == "auto" else float(text)
        if section == "optimizer" and name == "method":
            if text not in ("pg", "fp"):
                raise ValueError(f"method must be pg or fp, got '{text}'")
            return text
        if section == "verify" and name == "suites":
            names = tuple(part.strip() for part in text.split(",") if part.strip())
            unknown = [s for s in names if s not in SUITES]
            if unknown:
                raise ValueError(f"unknown suite(s): {', '.join(unknown)}")
            return names
        proto = _SECTIONS[section]()
        current = getattr(proto, name)
        if isinstance(current, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for '{section}.{name}': {exc}") from exc


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key '{key}' lacks a section prefix")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section '{section}' in key '{key}'")
        block = getattr(cfg, section)
        if name not in {f.name for f in fields(block)}:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        setattr(block, name, _parse_value(section, name, value, lineno))
    return cfg


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, tuple):
        return ",".join(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in ("problem", "optimizer", "verify"):
        block = getattr(cfg, section)
        for f in fields(block):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(block, f.name))}")
    return "\n".join(lines) + "\n"


_PROFILE_RE = re.compile(r"^([a-z]+)(?:\((.*)\))?$")


def _resolve_profile(text: str, grid: Grid, s: float):
    """Profile -> (samples, declared sup or None).  Supported: zero,
    bump(amplitude), eigen(k), csv(path)."""
    m = _PROFILE_RE.match(text.strip())
    if not m:
        raise ConfigError(f"malformed profile '{text}'")
    kind, arg = m.group(1), m.group(2)
    if kind == "zero":
        return np.zeros(grid.n), 0.0
    if kind == "bump":
        amp = float(arg)
        return bump_profile(grid, amp), abs(amp)
    if kind == "eigen":
        return eigen_profile(grid, s, int(arg)), None
    if kind == "csv":
        values = np.loadtxt(arg, ndmin=1)
        if values.shape != (grid.n,):
            raise ConfigError(f"profile file '{arg}' has {values.size} values, expected {grid.n}")
        return values, None
    raise ConfigError(f"unknown profile '{kind}' in '{text}'")


def build_spec(pcfg: ProblemConfig) -> ProblemSpec:
    try:
        grid = Grid.from_window(a=pcfg.a, b=pcfg.b, n=pcfg.n,
                                window=(pcfg.omega_a, pcfg.omega_b), T=pcfg.T, nt=pcfg.nt)
        rho0, sup0 = _resolve_profile(pcfg.rho0, grid, pcfg.s)
        rhod, supd = _resolve_profile(pcfg.rhod, grid, pcfg.s)
        return ProblemSpec(grid=grid, s=pcfg.s, alpha=pcfg.alpha, vmin=pcfg.m, vmax=pcfg.M,
                           rho0=rho0, rho_target=rhod, rho0_sup=sup0, target_sup=supd)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_options(ocfg: OptimizerConfig) -> OptimOptions:
    try:
        return OptimOptions(max_iters=ocfg.max_iters, kkt_tol=ocfg.kkt_tol,
                            armijo_c1=ocfg.armijo_c1, backtrack=ocfg.backtrack,
                            sigma0=ocfg.sigma0, fp_damping=ocfg.fp_damping, seed=ocfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_suite_config(cfg: RunConfig, suites=None, seed=None) -> SuiteConfig:
    v = cfg.verify
    return SuiteConfig(
        seed=v.seed if seed is None else seed,
        mp_cases=v.mp_cases, estimate_cases=v.estimate_cases,
        derivative_cases=v.derivative_cases, lipschitz_pairs=v.lipschitz_pairs,
        vi_samples=v.vi_samples, coercivity_samples=v.coercivity_samples,
        growth_samples=v.growth_samples, starts=v.starts, c_user=cfg.optimizer.c_user,
        spec=build_spec(cfg.problem), suites=tuple(suites) if suites else v.suites)


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    return parse_config(text)


def _parse_control_source(text: str, spec: ProblemSpec) -> ControlField:
    m = _PROFILE_RE.match(text.strip())
    if not m:
        raise ConfigError(f"malformed control source '{text}'")
    kind, arg = m.group(1), m.group(2)
    if kind == "zero":
        return constant_control(spec.grid, 0.0, spec.vmin, spec.vmax)
    if kind == "constant":
        return constant_control(spec.grid, float(arg), spec.vmin, spec.vmax)
    if kind == "csv":
        return _read_control_csv(arg, spec)
    raise ConfigError(f"unknown control source '{text}' (use zero, constant(c) or csv(path))")


def _read_control_csv(path: str, spec: ProblemSpec) -> ControlField:
    grid = spec.grid
    values = np.empty((grid.nt, grid.n_omega))
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["t", "x", "value"]:
                raise ConfigError(f"control file '{path}' must carry a t,x,value header")
            rows = list(reader)
    except OSError as exc:
        raise ConfigError(f"cannot read control file '{path}': {exc}") from exc
    if len(rows) != grid.nt * grid.n_omega:
        raise ConfigError(f"control file '{path}' has {len(rows)} rows, "
                          f"expected {grid.nt * grid.n_omega}")
    for idx, row in enumerate(rows):
        values[idx // grid.n_omega, idx % grid.n_omega] = float(row[2])
    return ControlField(values, grid, vmin=spec.vmin, vmax=spec.vmax)


def _write_kv(path: Path, items) -> None:
    with open(path, "w") as fh:
        for key, value in items:
            if isinstance(value, float):
                fh.write(f"{key} = {value:.17g}\n")
            else:
                fh.write(f"{key} = {value}\n")


def _solve_summary(spec: ProblemSpec, v: ControlField, rho) -> list:
    grid = spec.grid
    mismatch = rho.final - spec.rho_target
    track = math.sqrt(grid.dx * float(np.dot(mismatch, mismatch)))
    sup0 = float(np.max(np.abs(spec.rho0)))
    sups = np.max(np.abs(rho.values), axis=1)
    theta = v.theta
    if sup0 > 0:
        envelope = (1.0 - grid.dt * theta) ** (-np.arange(grid.nt + 1)) * sup0
        step_ratio = float(np.max(sups / envelope))
        growth_ratio = float(sups.max() / (math.exp(theta * grid.T) * sup0))
    else:
        step_ratio = 0.0
        growth_ratio = 0.0
    return [
        ("tracking_error_l2", track),
        ("state_sup", float(sups.max())),
        ("sup_bound_step_ratio", step_ratio),
        ("sup_bound_growth_ratio", growth_ratio),
        ("cost", cost_from_state(spec, v, rho)),
    ]


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    spec = build_spec(cfg.problem)
    v = _parse_control_source(args.control, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rho = solve_state(spec, v)
    export_trajectory_csv(rho, out / "rho.csv")
    if args.adjoint:
        q = solve_adjoint(spec, v, rho.final - spec.rho_target)
        export_trajectory_csv(q, out / "q.csv")
    _write_kv(out / "summary.txt", _solve_summary(spec, v, rho))
    return 0


def cmd_adjoint(args) -> int:
    cfg = _load_config(args.config)
    spec = build_spec(cfg.problem)
    v = _parse_control_source(args.control, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rho = solve_state(spec, v)
    q = solve_adjoint(spec, v, rho.final - spec.rho_target)
    export_trajectory_csv(q, out / "q.csv")
    items = _solve_summary(spec, v, rho)
    items.append(("adjoint_sup", q.linf()))
    _write_kv(out / "summary.txt", items)
    return 0


def cmd_optimize(args) -> int:
    cfg = _load_config(args.config)
    spec = build_spec(cfg.problem)
    opts = build_options(cfg.optimizer)
    if args.seed is not None:
        opts = replace(opts, seed=args.seed)
    start = constant_control(spec.grid, 0.0, spec.vmin, spec.vmax)
    driver = projected_gradient if cfg.optimizer.method == "pg" else fixed_point
    result: OptimResult = driver(spec, start, opts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_control_csv(result.u, out / "u.csv")
    export_trajectory_csv(result.rho, out / "rho.csv")
    export_trajectory_csv(result.q, out / "q.csv")
    (out / "summary.txt").write_text(result.summary_text(spec, c_user=cfg.optimizer.c_user))
    return 0 if result.status == "converged" else 4


def cmd_verify(args) -> int:
    cfg = _load_config(args.config)
    suites = [args.suite] if args.suite else None
    suite_cfg = build_suite_config(cfg, suites=suites, seed=args.seed)
    report = run_all(suite_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    report.to_csv(out / "report.csv")
    sys.stdout.write(report.to_text())
    return 0 if report.passed else 4


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args.config)
    spec = build_spec(cfg.problem)
    rng = np.random.default_rng(cfg.optimizer.seed if args.seed is None else args.seed)
    shape = (spec.grid.nt, spec.grid.n_omega)
    v = ControlField(rng.uniform(0.7 * spec.vmin, 0.7 * spec.vmax, shape), spec.grid,
                     vmin=spec.vmin, vmax=spec.vmax)
    w = ControlField(rng.standard_normal(shape), spec.grid)
    g, rho, _ = gradient(spec, v)
    directional = spec.control_dot(g, w.values)
    eps = 1e-5
    j_plus = cost_from_state(spec, v.like(v.values + eps * w.values),
                             solve_state(spec, v.like(v.values + eps * w.values)))
    j_minus = cost_from_state(spec, v.like(v.values - eps * w.values),
                              solve_state(spec, v.like(v.values - eps * w.values)))
    fd = (j_plus - j_minus) / (2 * eps)
    rel = abs(directional - fd) / max(abs(directional), 1e-300)
    sys.stdout.write(f"directional = {directional:.17g}\n"
                     f"central_difference = {fd:.17g}\n"
                     f"relative_error = {rel:.17g}\n")
    return 0 if rel <= 1e-6 else 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracctrl",
        description="Bilinear control of a fractional diffusion equation: "
                    "solve, optimize, verify.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, control=False):
        p.add_argument("--config", help="key = value config file; defaults used if omitted")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        if control:
            p.add_argument("--control", default="zero",
                           help="control source: zero, constant(c) or csv(path)")

    p = sub.add_parser("solve", help="run the forward solver and export the trajectory")
    common(p, control=True)
    p.add_argument("--adjoint", action="store_true", help="also export the adjoint trajectory")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("adjoint", help="run the forward then adjoint solver")
    common(p, control=True)
    p.set_defaults(func=cmd_adjoint)

    p = sub.add_parser("optimize", help="minimize the tracking cost over the control box")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("verify", help="run the verification suites")
    common(p)
    p.add_argument("--suite", choices=sorted(SUITES), help="run a single suite")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="compare the adjoint gradient with finite differences")
    common(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except StabilityError as exc:
        sys.stderr.write(f"stability error: {exc}\n")
        return 3
    except SolverError as exc:
        sys.stderr.write(f"internal error: {exc}\n")
        return 5


if __name__ == "__main__":
    sys.exit(main())
