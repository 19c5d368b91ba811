"""Verification harness: every checkable claim gets a named pass/fail entry.

Each check records the measured value against its frozen threshold.
Continuous a-priori inequalities are asserted in discrete form with explicit
slack factors; claims whose constants are not computable from first
principles are downgraded to report-only entries (threshold = inf).  All
suites are deterministic under a fixed seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .control import (
    check_coercivity,
    cost_from_state,
    gradient,
    hessian_bilinear,
    kkt_residual,
    project,
    ssc_smallness,
    uniqueness_condition,
)
from .fracop import (
    Grid,
    assemble_operator,
    assemble_weights,
    l2_norm,
    normalization_constant,
    quadrature_oracle,
    v_seminorm,
    vstar_norm,
)
from .optimize import OptimOptions, fixed_point, multistart_uniqueness, projected_gradient
from .pdesolve import (
    ControlField,
    constant_control,
    solve_adjoint,
    solve_linearized,
    solve_shifted,
    solve_sourced,
    solve_state,
    source_vstar_norm,
)
from .problem import ProblemSpec, benchmark_problem, bump_profile

# Registry of check names and the property each one verifies.  The harness
# meta-test requires every enabled check to appear exactly once and every
# registry entry to be covered by the full run.
CLAIMS = {
    "operator-weights": "half-order weights match the closed forms 4/pi, -4/(3pi), -4/(15pi)",
    "operator-normalization": "singular-integral constant at order 1/2 equals 1/pi",
    "operator-sign-pattern": "g_0 > 0 and g_k < 0 for k >= 1 across random orders",
    "operator-symmetry": "assembled matrices are exactly symmetric",
    "operator-positive-definite": "smallest eigenvalue positive for all tested sizes",
    "operator-closed-form": "profile (1-x^2)^s reproduces its constant image away from the boundary",
    "operator-oracle-agreement": "matrix operator matches the quadrature oracle under refinement",
    "norm-duality": "dual norm equals the supremum of the duality pairing",
    "state-nonnegativity": "nonnegative initial data keep the state nonnegative",
    "state-sup-bound": "per-step sup bound (1-dt*theta)^-n holds at every level",
    "state-sup-growth": "sup-norm growth stays within 1.05 of the exponential envelope",
    "shifted-energy-sup": "shifted system: sup-in-time L2 energy bounded by data",
    "shifted-energy-dissipation": "shifted system: dissipated energy bounded by data",
    "sourced-energy-sup": "sourced system: sup-in-time L2 bounded by exp(2 theta T) times data",
    "sourced-energy-dissipation": "sourced system: dissipated energy bounded by exp(2 theta T) times data",
    "state-supl2-bound": "homogeneous state: sup-in-time L2 bounded by exp(theta T) times the datum",
    "adjoint-sup-bound": "adjoint per-step sup bound from the M-matrix property",
    "adjoint-energy-ratio": "adjoint energy per unit data (constant unknown, reported)",
    "derivative-convex-exact": "zero initial state: gradient reduces to the regularizer exactly",
    "gradient-fd": "adjoint gradient matches central differences",
    "gradient-duality": "terminal sensitivity pairing equals window multiplier pairing",
    "gradient-fd-vshape": "finite-difference error is V-shaped in the step with a deep minimum",
    "hessian-symmetry": "Hessian bilinear form is symmetric",
    "hessian-fd": "Hessian quadratic form matches second central differences",
    "linearized-fd-slope": "linearized solver is the first-order term of the control perturbation",
    "state-lipschitz": "control-to-state difference ratios bounded and mesh-stable",
    "adjoint-lipschitz": "control-to-adjoint difference ratios bounded and mesh-stable",
    "lipschitz-data-scaling": "difference ratios scale linearly with the initial-data magnitude",
    "optimizer-converged": "projected gradient reaches the KKT tolerance (computed minimizer witness)",
    "variational-inequality": "sampled first-order inequality holds at the computed control",
    "projection-consistency": "projected gradient and fixed-point iteration agree",
    "second-order-necessary": "sampled Hessian quotients nonnegative on the zero-threshold cone",
    "second-order-sufficient": "sampled Hessian quotients at least alpha/2 on the critical cone",
    "quadratic-growth": "sampled costs do not undercut the computed minimum",
    "local-uniqueness": "random starts converge to one control under the smallness condition",
    "condition-smallness": "smallness-condition margins for uniqueness and sufficiency (reported)",
}

REPORT_ONLY = math.inf


@dataclass
class CheckResult:
    name: str
    claim: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    @property
    def status(self) -> str:
        return "pass" if self.passed else "FAIL"


@dataclass
class VerifyReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, value: float, threshold: float,
            detail: str = "") -> None:
        self.checks.append(CheckResult(name=name, claim=CLAIMS[name], passed=bool(passed),
                                       value=float(value), threshold=float(threshold),
                                       detail=detail))

    def add_report(self, name: str, value: float, detail: str = "") -> None:
        """Report-only entry: recorded, never failing."""
        self.add(name, True, value, REPORT_ONLY, detail=detail or "report-only")

    def extend(self, other: "VerifyReport") -> None:
        self.checks.extend(other.checks)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            thr = "reported" if c.threshold == REPORT_ONLY else f"{c.threshold:.6g}"
            line = f"[{c.status}] {c.name}: value={c.value:.10g} threshold={thr}"
            if c.detail:
                line += f" ({c.detail})"
            lines.append(line)
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'} "
                     f"({sum(c.passed for c in self.checks)}/{len(self.checks)})")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["check", "value", "threshold", "status"])
            for c in self.checks:
                thr = "reported" if c.threshold == REPORT_ONLY else f"{c.threshold:.17g}"
                writer.writerow([c.name, f"{c.value:.17g}", thr, c.status])


def _estimate_instance(n=64, nt=256) -> ProblemSpec:
    grid = Grid.from_window(a=-1.0, b=1.0, n=n, window=(-0.5, 0.5), T=0.5, nt=nt)
    return ProblemSpec(grid=grid, s=0.5, alpha=1.0, vmin=-1.0, vmax=1.0,
                       rho0=np.zeros(n), rho_target=np.zeros(n))


def _random_admissible(spec: ProblemSpec, rng) -> ControlField:
    vals = rng.uniform(spec.vmin, spec.vmax, size=(spec.grid.nt, spec.grid.n_omega))
    return ControlField(vals, spec.grid, vmin=spec.vmin, vmax=spec.vmax)


def run_operator_suite() -> VerifyReport:
    report = VerifyReport()

    g = assemble_weights(0.5, 3)
    ref = np.array([4 / math.pi, -4 / (3 * math.pi), -4 / (15 * math.pi)])
    report.add("operator-weights", np.max(np.abs(g - ref)) <= 1e-14,
               np.max(np.abs(g - ref)), 1e-14)

    cerr = abs(normalization_constant(0.5) - 1 / math.pi)
    report.add("operator-normalization", cerr <= 1e-14, cerr, 1e-14)

    rng = np.random.default_rng(0)
    sign_ok = True
    for s in rng.uniform(1e-3, 1 - 1e-3, size=1000):
        w = assemble_weights(s, 201)
        if not (w[0] > 0 and np.all(w[1:] < 0)):
            sign_ok = False
            break
    report.add("operator-sign-pattern", sign_ok, float(sign_ok), 1.0,
               detail="1000 random orders, 201 weights each")

    sym_err = 0.0
    min_eig = math.inf
    for n, s in ((64, 0.25), (128, 0.5), (256, 0.75), (256, 0.5)):
        grid = Grid.from_window(-1.0, 1.0, n, (-1.0, 1.0), 1.0, 1)
        op = assemble_operator(grid, s)
        sym_err = max(sym_err, float(np.max(np.abs(op.matrix - op.matrix.T))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(op.matrix).min()))
    report.add("operator-symmetry", sym_err == 0.0, sym_err, 0.0)
    report.add("operator-positive-definite", min_eig > 0.0, min_eig, 0.0,
               detail="dense eigensolve, n up to 256")

    # closed-form profile: max interior error decreases monotonically for each
    # order; at s = 0.5 the discrete-L2 error over the kept nodes meets 1e-3
    closed_ok = True
    l2_at_half = math.nan
    details = []
    for s in (0.25, 0.5, 0.75):
        c = 2.0**(2 * s) * math.gamma(s + 1) * math.gamma(s + 0.5) / math.gamma(0.5)
        max_errs = []
        for n in (64, 128, 256):
            grid = Grid.from_window(-1.0, 1.0, n, (-1.0, 1.0), 1.0, 1)
            op = assemble_operator(grid, s)
            x = grid.nodes
            u = np.maximum(1 - x**2, 0.0)**s
            keep = np.abs(x) <= 0.8  # nodes within 10% of the boundary excluded
            err = op.apply(u)[keep] - c
            max_errs.append(float(np.max(np.abs(err))))
            if s == 0.5 and n == 256:
                l2_at_half = l2_norm(grid.dx, err)
        closed_ok &= all(b < a for a, b in zip(max_errs, max_errs[1:]))
        details.append(f"s={s}: max_err={max_errs[-1]:.3e}")
    closed_ok &= l2_at_half <= 1e-3
    report.add("operator-closed-form", closed_ok, l2_at_half, 1e-3,
               detail="; ".join(details) + "; value is the L2 error at s=0.5, n=256")

    oracle_ok = True
    worst_rel = 0.0
    test_u = lambda y: math.exp(-y**2) * max(1 - y**2, 0.0)**2
    points = [0.0, 0.31, -0.52, 0.7, -0.11]
    for s in (0.3, 0.5, 0.7):
        prev = None
        for n in (64, 128, 256):
            grid = Grid.from_window(-1.0, 1.0, n, (-1.0, 1.0), 1.0, 1)
            op = assemble_operator(grid, s)
            au = op.apply(np.array([test_u(xi) for xi in grid.nodes]))
            worst = 0.0
            for p in points:
                i = int(round((p - grid.a) / grid.dx)) - 1
                ref_val = quadrature_oracle(test_u, grid.nodes[i], s, grid.dx / 4)
                worst = max(worst, abs(au[i] - ref_val))
            envelope = 0.5 * grid.dx ** min(2 - 2 * s, 1.0)
            worst_rel = max(worst_rel, worst / envelope)
            oracle_ok &= worst <= envelope
            if prev is not None:
                oracle_ok &= worst < prev
            prev = worst
    report.add("operator-oracle-agreement", oracle_ok, worst_rel, 1.0,
               detail="worst error relative to the refinement envelope")

    rng = np.random.default_rng(1)
    grid = Grid.from_window(-1.0, 1.0, 32, (-1.0, 1.0), 1.0, 1)
    op = assemble_operator(grid, 0.6)
    f = rng.standard_normal(32)
    target = vstar_norm(op, f)
    best = 0.0
    for _ in range(1000):
        u = rng.standard_normal(32)
        best = max(best, grid.dx * float(np.dot(f, u)) / v_seminorm(op, u))
    u_star = op.solve(f)
    best = max(best, grid.dx * float(np.dot(f, u_star)) / v_seminorm(op, u_star))
    rel = abs(best - target) / target
    report.add("norm-duality", rel <= 1e-6 and best <= target * (1 + 1e-12), rel, 1e-6)
    return report


def run_maximum_principle_suite(seed: int = 0, n_cases: int = 100,
                                nt: int = 256) -> VerifyReport:
    report = VerifyReport()
    rng = np.random.default_rng(seed)
    base = _estimate_instance(nt=nt)
    worst_min = 0.0
    worst_step = 0.0
    worst_growth = 0.0
    for case in range(n_cases):
        rho0 = np.abs(rng.standard_normal(base.grid.n)) * rng.uniform(0.1, 2.0)
        spec = ProblemSpec(grid=base.grid, s=base.s, alpha=base.alpha,
                           vmin=base.vmin, vmax=base.vmax,
                           rho0=rho0, rho_target=base.rho_target)
        if case == 0:
            # adversarial control alternating between the box corners per step
            vals = np.empty((spec.grid.nt, spec.grid.n_omega))
            vals[0::2] = spec.vmax
            vals[1::2] = spec.vmin
            v = ControlField(vals, spec.grid, spec.vmin, spec.vmax)
        else:
            v = _random_admissible(spec, rng)
        rho = solve_state(spec, v)
        sup0 = float(np.max(np.abs(rho0)))
        worst_min = min(worst_min, float(rho.values.min()) / sup0)
        sups = np.max(np.abs(rho.values), axis=1)
        bounds = (1.0 - spec.grid.dt * v.theta) ** (-np.arange(spec.grid.nt + 1)) * sup0
        worst_step = max(worst_step, float(np.max(sups / bounds)))
        worst_growth = max(worst_growth, float(sups.max())
                           / (math.exp(v.theta * spec.grid.T) * sup0))
    report.add("state-nonnegativity", worst_min >= -1e-12, worst_min, -1e-12,
               detail=f"{n_cases} cases incl. alternating-corner control; value is min rho / sup|rho0|")
    report.add("state-sup-bound", worst_step <= 1.0 + 1e-12, worst_step, 1.0 + 1e-12,
               detail="worst ratio to the per-step envelope")
    report.add("state-sup-growth", worst_growth <= 1.05, worst_growth, 1.05,
               detail=f"worst ratio to exp(theta T) sup|rho0| at nt={nt}")
    return report


def run_estimate_suite(seed: int = 0, n_cases: int = 50) -> VerifyReport:
    report = VerifyReport()
    rng = np.random.default_rng(seed)
    base = _estimate_instance()
    grid = base.grid
    slack = 1.1
    worst = dict.fromkeys(
        ["shift_sup", "shift_diss", "src_sup", "src_diss", "supl2", "adj_step"], 0.0)
    adj_energy = 0.0
    e2 = math.exp(2.0 * base.theta * grid.T)
    e1 = math.exp(base.theta * grid.T)
    for _ in range(n_cases):
        rho0 = rng.standard_normal(grid.n)
        target = 0.5 * rng.standard_normal(grid.n)
        spec = ProblemSpec(grid=grid, s=base.s, alpha=base.alpha, vmin=base.vmin,
                           vmax=base.vmax, rho0=rho0, rho_target=target)
        v = _random_admissible(spec, rng)
        f = rng.standard_normal((grid.nt, grid.n))
        data = source_vstar_norm(spec, f) ** 2 + l2_norm(grid.dx, rho0) ** 2

        z = solve_shifted(spec, v, f)
        worst["shift_sup"] = max(worst["shift_sup"], z.sup_l2() ** 2 / data)
        worst["shift_diss"] = max(worst["shift_diss"], z.st_v(spec.operator) ** 2 / data)

        rho_f = solve_sourced(spec, v, f)
        worst["src_sup"] = max(worst["src_sup"], rho_f.sup_l2() ** 2 / (e2 * data))
        worst["src_diss"] = max(worst["src_diss"], rho_f.st_v(spec.operator) ** 2 / (e2 * data))

        rho = solve_state(spec, v)
        worst["supl2"] = max(worst["supl2"],
                             rho.sup_l2() / (e1 * l2_norm(grid.dx, rho0)))

        terminal = rho.final - target
        q = solve_adjoint(spec, v, terminal)
        sup_t = float(np.max(np.abs(terminal)))
        steps = np.arange(grid.nt, 0, -1)  # nt - n + 1 for n = 1..nt
        bounds = (1.0 - grid.dt * v.theta) ** (-steps.astype(float)) * sup_t
        sups = np.max(np.abs(q.values[1:]), axis=1)
        worst["adj_step"] = max(worst["adj_step"], float(np.max(sups / bounds)))
        denom = e1 * (l2_norm(grid.dx, rho0) + l2_norm(grid.dx, target))
        adj_energy = max(adj_energy, q.st_v(spec.operator) / denom)

    report.add("shifted-energy-sup", worst["shift_sup"] <= slack, worst["shift_sup"], slack)
    report.add("shifted-energy-dissipation", worst["shift_diss"] <= slack,
               worst["shift_diss"], slack)
    report.add("sourced-energy-sup", worst["src_sup"] <= slack, worst["src_sup"], slack,
               detail="ratio already divided by exp(2 theta T)")
    report.add("sourced-energy-dissipation", worst["src_diss"] <= slack,
               worst["src_diss"], slack, detail="ratio already divided by exp(2 theta T)")
    report.add("state-supl2-bound", worst["supl2"] <= slack, worst["supl2"], slack,
               detail="ratio already divided by exp(theta T)")
    report.add("adjoint-sup-bound", worst["adj_step"] <= 1.0 + 1e-12,
               worst["adj_step"], 1.0 + 1e-12, detail="worst ratio to the per-step envelope")
    report.add_report("adjoint-energy-ratio", adj_energy,
                      detail="energy norm per exp(theta T)(|rho0| + |target|); constant not asserted")
    return report


def _derivative_instance(rng) -> ProblemSpec:
    grid = Grid.from_window(a=-1.0, b=1.0, n=20, window=(-0.6, 0.6), T=0.5, nt=32)
    return ProblemSpec(grid=grid, s=0.5, alpha=1.0, vmin=-1.0, vmax=1.0,
                       rho0=rng.standard_normal(20), rho_target=rng.standard_normal(20))


def run_derivative_suite(seed: int = 0, n_cases: int = 20) -> VerifyReport:
    report = VerifyReport()
    rng = np.random.default_rng(seed)
    worst_fd = worst_dual = worst_sym = worst_hfd = worst_slope = 0.0
    vshape_min = math.inf

    # zero initial state: rho vanishes, the gradient is alpha*v exactly
    spec0 = _derivative_instance(rng)
    spec0 = ProblemSpec(grid=spec0.grid, s=spec0.s, alpha=spec0.alpha, vmin=spec0.vmin,
                        vmax=spec0.vmax, rho0=np.zeros(spec0.grid.n),
                        rho_target=spec0.rho_target)
    v0 = _random_admissible(spec0, rng)
    w0 = ControlField(rng.standard_normal(v0.values.shape), spec0.grid)
    g0, _, _ = gradient(spec0, v0)
    d0 = spec0.control_dot(g0, w0.values)
    # the cost is exactly quadratic here, so the central difference carries no
    # truncation term at any step; a large step avoids cancellation noise
    eps = 1e-2
    fd0 = (cost_from_state(spec0, v0.like(v0.values + eps * w0.values),
                           solve_state(spec0, v0.like(v0.values + eps * w0.values)))
           - cost_from_state(spec0, v0.like(v0.values - eps * w0.values),
                             solve_state(spec0, v0.like(v0.values - eps * w0.values)))) / (2 * eps)
    conv_err = abs(d0 - fd0) / abs(d0)
    exact_err = float(np.max(np.abs(g0 - spec0.alpha * v0.values)))
    report.add("derivative-convex-exact", exact_err == 0.0 and conv_err <= 1e-10,
               max(exact_err, conv_err), 1e-10)

    for case in range(n_cases):
        spec = _derivative_instance(rng)
        v = ControlField(rng.uniform(0.7 * spec.vmin, 0.7 * spec.vmax,
                                     size=(spec.grid.nt, spec.grid.n_omega)),
                         spec.grid, spec.vmin, spec.vmax)
        w = ControlField(rng.standard_normal(v.values.shape), spec.grid)
        d = ControlField(rng.standard_normal(v.values.shape), spec.grid)

        g, rho, q = gradient(spec, v)
        directional = spec.control_dot(g, w.values)

        def j_at(vals):
            fld = v.like(vals)
            return cost_from_state(spec, fld, solve_state(spec, fld))

        eps = 1e-5
        fd = (j_at(v.values + eps * w.values) - j_at(v.values - eps * w.values)) / (2 * eps)
        worst_fd = max(worst_fd, abs(directional - fd) / abs(directional))

        y = solve_linearized(spec, v, w, rho)
        lhs = spec.grid.dx * float(np.dot(rho.final - spec.rho_target, y.final))
        rhs = spec.control_dot(w.values * rho.restrict_omega(), q.restrict_omega())
        worst_dual = max(worst_dual, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))

        h_wd = hessian_bilinear(spec, v, w, d, rho=rho, q=q)
        h_dw = hessian_bilinear(spec, v, d, w, rho=rho, q=q)
        worst_sym = max(worst_sym, abs(h_wd - h_dw) / abs(h_wd))

        h_ww = hessian_bilinear(spec, v, w, w, rho=rho, q=q)
        eps2 = 1e-3
        sd = (j_at(v.values + eps2 * w.values) - 2 * j_at(v.values)
              + j_at(v.values - eps2 * w.values)) / eps2**2
        worst_hfd = max(worst_hfd, abs(h_ww - sd) / abs(h_ww))

        eps_grid = np.array([1e-2, 1e-3, 1e-4])
        errs = []
        for e in eps_grid:
            pert = solve_state(spec, v.like(v.values + e * w.values))
            diff = (pert.values - rho.values) / e - y.values
            errs.append(math.sqrt(spec.grid.dx * spec.grid.dt * float(np.sum(diff[1:] ** 2))))
        slope = float(np.polyfit(np.log(eps_grid), np.log(errs), 1)[0])
        worst_slope = max(worst_slope, abs(slope - 1.0))

        if case < 3:
            sweep = []
            for e in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
                fd_e = (j_at(v.values + e * w.values) - j_at(v.values - e * w.values)) / (2 * e)
                sweep.append(abs(fd_e - directional) / abs(directional))
            vshape_min = min(vshape_min, min(sweep))

    report.add("gradient-fd", worst_fd <= 1e-6, worst_fd, 1e-6,
               detail=f"{n_cases} cases, central differences at eps=1e-5")
    report.add("gradient-duality", worst_dual <= 1e-12, worst_dual, 1e-12)
    report.add("hessian-symmetry", worst_sym <= 1e-13, worst_sym, 1e-13)
    report.add("hessian-fd", worst_hfd <= 1e-4, worst_hfd, 1e-4,
               detail="second central differences at eps=1e-3")
    report.add("linearized-fd-slope", worst_slope <= 0.1, worst_slope, 0.1,
               detail="worst |slope - 1| on the log-log fit")
    report.add("gradient-fd-vshape", vshape_min <= 1e-7, vshape_min, 1e-7,
               detail="minimum of the eps sweep over 3 cases")
    return report


def _lipschitz_ratios(spec: ProblemSpec, pairs) -> tuple[float, float]:
    op = spec.operator
    state_ratio = adj_ratio = 0.0
    for v1, v2 in pairs:
        c1 = ControlField(v1, spec.grid, spec.vmin, spec.vmax)
        c2 = ControlField(v2, spec.grid, spec.vmin, spec.vmax)
        dv = spec.control_norm(v1 - v2)
        rho1 = solve_state(spec, c1)
        rho2 = solve_state(spec, c2)
        diff = rho1.values - rho2.values
        num = math.sqrt(spec.grid.dt
                        * sum(v_seminorm(op, row) ** 2 for row in diff[1:]))
        state_ratio = max(state_ratio, num / dv)
        q1 = solve_adjoint(spec, c1, rho1.final - spec.rho_target)
        q2 = solve_adjoint(spec, c2, rho2.final - spec.rho_target)
        qdiff = q1.values - q2.values
        qnum = math.sqrt(spec.grid.dt
                         * sum(v_seminorm(op, row) ** 2 for row in qdiff[1:]))
        adj_ratio = max(adj_ratio, qnum / dv)
    return state_ratio, adj_ratio


def _lipschitz_instance(n, nt, amp) -> ProblemSpec:
    grid = Grid.from_window(a=-1.0, b=1.0, n=n, window=(-0.5, 0.5), T=0.5, nt=nt)
    return ProblemSpec(grid=grid, s=0.5, alpha=1.0, vmin=-1.0, vmax=1.0,
                       rho0=bump_profile(grid, amp), rho_target=bump_profile(grid, amp / 2))


def _fit_lipschitz_constant(ratio, spec: ProblemSpec) -> float:
    """Solve ratio = [(2 + C1 theta) e^(theta T) + 1] e^(theta T) sup|rho0| for C1."""
    e1 = math.exp(spec.theta * spec.grid.T)
    return ((ratio / (e1 * spec.rho0_sup) - 1.0) / e1 - 2.0) / spec.theta


def _realize_blocks(spec: ProblemSpec, block: np.ndarray) -> np.ndarray:
    """Sample a piecewise-constant space-time field on the control grid.

    The block lattice is fixed in continuum coordinates, so coarse and fine
    grids sample the same admissible control and difference ratios can be
    compared across refinement.
    """
    bt, bx = block.shape
    grid = spec.grid
    t_idx = np.minimum(((np.arange(grid.nt) + 0.5) / grid.nt * bt).astype(int), bt - 1)
    xi = (grid.nodes[grid.omega_mask] - grid.a) / (grid.b - grid.a)
    x_idx = np.minimum((xi * bx).astype(int), bx - 1)
    return block[np.ix_(t_idx, x_idx)]


def run_lipschitz_suite(seed: int = 0, n_pairs: int = 50) -> VerifyReport:
    report = VerifyReport()
    rng = np.random.default_rng(seed)
    base = _lipschitz_instance(64, 256, 0.1)

    blocks = [(rng.uniform(base.vmin, base.vmax, (16, 8)),
               rng.uniform(base.vmin, base.vmax, (16, 8))) for _ in range(n_pairs)]

    def realize_pairs(spec, count):
        return [(_realize_blocks(spec, b1), _realize_blocks(spec, b2))
                for b1, b2 in blocks[:count]]

    base_pairs = realize_pairs(base, n_pairs)
    s_base, a_base = _lipschitz_ratios(base, base_pairs)

    fine = _lipschitz_instance(129, 512, 0.1)
    s_fine, a_fine = _lipschitz_ratios(fine, realize_pairs(fine, max(n_pairs // 4, 4)))

    # value is the mesh-stability quotient; the raw ratios are reported in the
    # detail together with the fitted constant of the a-priori template
    s_quot = s_fine / s_base
    a_quot = a_fine / a_base
    state_ok = math.isfinite(s_base) and math.isfinite(s_fine) and 0.5 <= s_quot <= 2.0
    adj_ok = math.isfinite(a_base) and math.isfinite(a_fine) and 0.5 <= a_quot <= 2.0
    report.add("state-lipschitz", state_ok, s_quot, 2.0,
               detail=f"ratio {s_base:.6g} (refined {s_fine:.6g}); fitted constant "
                      f"{_fit_lipschitz_constant(s_base, base):.6g}")
    report.add("adjoint-lipschitz", adj_ok, a_quot, 2.0,
               detail=f"ratio {a_base:.6g} (refined {a_fine:.6g})")

    # the state map is linear in the initial datum at fixed controls, so the
    # ratio must scale exactly with the data amplitude (both data scaled)
    small = _lipschitz_instance(64, 256, 0.01)
    s_small, a_small = _lipschitz_ratios(small, base_pairs)
    scale_state = s_small / s_base
    scale_adj = a_small / a_base
    scaling_ok = abs(scale_state - 0.1) <= 1e-6 and abs(scale_adj - 0.1) <= 1e-6
    report.add("lipschitz-data-scaling", scaling_ok,
               max(abs(scale_state - 0.1), abs(scale_adj - 0.1)), 1e-6,
               detail="deviation of the ratio-of-ratios from the 0.1 data scale")
    return report


def sampled_vi_min(spec: ProblemSpec, u: ControlField, g: np.ndarray,
                   n_samples: int, rng) -> float:
    """Minimum of <g, v-u> over random admissible v (first-order inequality)."""
    worst = math.inf
    for _ in range(n_samples):
        v = rng.uniform(spec.vmin, spec.vmax, size=u.values.shape)
        worst = min(worst, spec.control_dot(g, v - u.values))
    return worst


def run_optimality_suite(spec: ProblemSpec | None = None,
                         opts: OptimOptions | None = None,
                         seed: int = 0,
                         vi_samples: int = 100,
                         coercivity_samples: int = 64,
                         growth_samples: int = 50,
                         starts: int = 8,
                         c_user: float = 0.0) -> VerifyReport:
    report = VerifyReport()
    if spec is None:
        spec = benchmark_problem()
    if opts is None:
        opts = OptimOptions(kkt_tol=1e-8, seed=seed)
    rng = np.random.default_rng(seed + 1)

    start = constant_control(spec.grid, 0.0, spec.vmin, spec.vmax)
    result = projected_gradient(spec, start, opts)
    kkt = kkt_residual(spec, result.u, rho=result.rho, q=result.q)
    report.add("optimizer-converged",
               result.status == "converged" and kkt.residual <= opts.kkt_tol,
               kkt.residual, opts.kkt_tol,
               detail=f"status={result.status} after {result.iterations} iterations")

    vi = sampled_vi_min(spec, result.u, kkt.g, vi_samples, rng)
    report.add("variational-inequality", vi >= -1e-8, vi, -1e-8,
               detail=f"{vi_samples} random admissible controls")

    uniq = uniqueness_condition(spec)
    ssc = ssc_smallness(spec, c_user)
    report.add_report("condition-smallness", uniq.margin,
                      detail=f"uniqueness lhs={uniq.lhs:.6g} holds={uniq.holds}; "
                             f"sufficiency lhs={ssc.lhs:.6g} holds={ssc.holds} at C={c_user:g}")

    necessary = check_coercivity(spec, result.u, tau=0.0,
                                 n_samples=coercivity_samples, seed=seed + 2)
    report.add("second-order-necessary",
               necessary.status == "ok"
               and necessary.min_quotient >= -1e-8 * spec.alpha,
               necessary.min_quotient, -1e-8 * spec.alpha,
               detail=f"{necessary.n_used} sampled directions on the zero-threshold cone")

    sufficient = check_coercivity(spec, result.u, tau=1e-3 * spec.alpha,
                                  n_samples=coercivity_samples, seed=seed + 3)
    if uniq.holds:
        report.add("second-order-sufficient",
                   sufficient.status == "ok" and sufficient.min_quotient >= 0.5 * spec.alpha,
                   sufficient.min_quotient, 0.5 * spec.alpha,
                   detail=f"{sufficient.n_used} sampled critical directions")
    else:
        report.add_report("second-order-sufficient", sufficient.min_quotient,
                          detail="smallness condition fails; observational only")

    j_star = result.j_final
    gamma = 0.1 * (spec.vmax - spec.vmin)
    growth_min = math.inf
    beta_hat = math.inf
    for _ in range(growth_samples):
        direction = rng.standard_normal(result.u.values.shape)
        radius = gamma * rng.uniform(0.1, 1.0)
        norm = spec.control_norm(direction)
        cand = project(spec, result.u.values + direction * (radius / norm))
        dist = spec.control_norm(cand.values - result.u.values)
        if dist <= 1e-12:
            continue
        j_cand = cost_from_state(spec, cand, solve_state(spec, cand))
        growth_min = min(growth_min, j_cand - j_star)
        beta_hat = min(beta_hat, (j_cand - j_star) / dist**2)
    report.add("quadratic-growth", growth_min >= -1e-10, growth_min, -1e-10,
               detail=f"fitted growth coefficient {beta_hat:.6g} over {growth_samples} samples")

    multi = multistart_uniqueness(spec, starts, OptimOptions(kkt_tol=opts.kkt_tol, seed=seed + 4))
    if multi.assertion_mode:
        report.add("local-uniqueness",
                   multi.all_converged and multi.max_pairwise <= multi.threshold,
                   multi.max_pairwise, multi.threshold,
                   detail=f"{starts} starts, all converged: {multi.all_converged}")
    else:
        report.add_report("local-uniqueness", multi.max_pairwise,
                          detail="smallness condition fails; observational only")

    # cross-solver consistency: undamped fixed-point from a different start
    # must land on the same control
    fp_start = constant_control(spec.grid, spec.vmin + 0.75 * (spec.vmax - spec.vmin),
                                spec.vmin, spec.vmax)
    fp = fixed_point(spec, fp_start, OptimOptions(kkt_tol=opts.kkt_tol, fp_damping=1.0))
    agree = spec.control_norm(fp.u.values - result.u.values)
    report.add("projection-consistency",
               fp.status == "converged" and agree <= 1e-6, agree, 1e-6,
               detail="L2 distance between projected-gradient and fixed-point controls")
    return report


SUITES = {
    "operator": lambda cfg: run_operator_suite(),
    "maximum-principle": lambda cfg: run_maximum_principle_suite(
        seed=cfg.seed, n_cases=cfg.mp_cases),
    "estimates": lambda cfg: run_estimate_suite(seed=cfg.seed, n_cases=cfg.estimate_cases),
    "derivatives": lambda cfg: run_derivative_suite(seed=cfg.seed, n_cases=cfg.derivative_cases),
    "lipschitz": lambda cfg: run_lipschitz_suite(seed=cfg.seed, n_pairs=cfg.lipschitz_pairs),
    "optimality": lambda cfg: run_optimality_suite(
        spec=cfg.spec, seed=cfg.seed, vi_samples=cfg.vi_samples,
        coercivity_samples=cfg.coercivity_samples, growth_samples=cfg.growth_samples,
        starts=cfg.starts, c_user=cfg.c_user),
}


@dataclass
class SuiteConfig:
    """Case counts and seed for the full harness run."""

    seed: int = 0
    mp_cases: int = 100
    estimate_cases: int = 50
    derivative_cases: int = 20
    lipschitz_pairs: int = 50
    vi_samples: int = 100
    coercivity_samples: int = 64
    growth_samples: int = 50
    starts: int = 8
    c_user: float = 0.0
    spec: ProblemSpec | None = None
    suites: tuple = tuple(SUITES)


def run_all(cfg: SuiteConfig | None = None) -> VerifyReport:
    if cfg is None:
        cfg = SuiteConfig()
    report = VerifyReport()
    for name in cfg.suites:
        if name not in SUITES:
            raise ValueError(f"unknown suite '{name}'; available: {', '.join(SUITES)}")
        report.extend(SUITES[name](cfg))
    return report
