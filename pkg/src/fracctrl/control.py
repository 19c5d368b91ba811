"""Cost functional, adjoint-based derivatives, and optimality machinery.

The gradient is returned as the Riesz representative against the discrete
L2(omega x (0,T)) inner product dx*dt*<.,.>, i.e. g = alpha*u + rho*q on the
window nodes.  With this convention the projection formula

    u = clip(-rho*q/alpha, [vmin, vmax])

is literally the optimizer's fixed-point map, and the directional
derivative of the discrete cost along w equals dx*dt*sum(g*w) with no
discretization error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .pdesolve import (
    ControlField,
    TimeField,
    solve_adjoint,
    solve_linearized,
    solve_state,
)
from .problem import ProblemSpec

# The pointwise optimality trichotomy (control at a bound where the gradient
# field has a strict sign, undetermined on its zero set) is measure-theoretic;
# classifying floats requires a tie threshold relative to the field magnitude.
TIE_REL = 1e-10
# Box-boundary detection tolerance, relative to the box width.
BOX_REL = 1e-9


def cost_from_state(spec: ProblemSpec, v: ControlField, rho: TimeField) -> float:
    mismatch = rho.final - spec.rho_target
    track = 0.5 * spec.grid.dx * float(np.dot(mismatch, mismatch))
    reg = 0.5 * spec.alpha * spec.control_dot(v.values, v.values)
    return track + reg


def cost(spec: ProblemSpec, v: ControlField) -> float:
    """J(v) = 1/2 ||rho(T) - target||_L2^2 + alpha/2 ||v||_L2(omega_T)^2."""
    return cost_from_state(spec, v, solve_state(spec, v))


def gradient(spec: ProblemSpec, v: ControlField):
    """Gradient field on the window plus the state and adjoint trajectories.

    Returns (g, rho, q) with g = alpha*v + rho*q control-shaped; the identity
    dJ/deps J(v + eps*w) = dx*dt*sum(g*w) is exact for the discrete cost.
    """
    rho = solve_state(spec, v)
    q = solve_adjoint(spec, v, rho.final - spec.rho_target)
    g = spec.alpha * v.values + rho.restrict_omega() * q.restrict_omega()
    return g, rho, q


def hessian_bilinear(spec: ProblemSpec, u: ControlField, w: ControlField, d: ControlField,
                     rho: TimeField | None = None, q: TimeField | None = None,
                     y_w: TimeField | None = None, y_d: TimeField | None = None) -> float:
    """Second derivative of the discrete cost along the direction pair (w, d).

    Exact for the discrete objective and symmetric in (w, d) by construction.
    Precomputed trajectories may be passed to avoid repeated solves; w is d
    reuses y_w for y_d.
    """
    if rho is None:
        rho = solve_state(spec, u)
    if q is None:
        q = solve_adjoint(spec, u, rho.final - spec.rho_target)
    if y_w is None:
        y_w = solve_linearized(spec, u, w, rho)
    if y_d is None:
        y_d = y_w if d is w else solve_linearized(spec, u, d, rho)
    q_w = q.restrict_omega()
    cross = spec.control_dot(d.values * y_w.restrict_omega()
                             + w.values * y_d.restrict_omega(), q_w)
    terminal = spec.grid.dx * float(np.dot(y_w.final, y_d.final))
    reg = spec.alpha * spec.control_dot(d.values, w.values)
    return cross + terminal + reg


def project(spec: ProblemSpec, raw) -> ControlField:
    """Pointwise clip onto the admissible box; idempotent and 1-Lipschitz in L2."""
    values = raw.values if isinstance(raw, ControlField) else np.asarray(raw, dtype=float)
    clipped = np.clip(values, spec.vmin, spec.vmax)
    return ControlField(clipped, spec.grid, vmin=spec.vmin, vmax=spec.vmax)


def fixed_point_target(spec: ProblemSpec, rho: TimeField, q: TimeField) -> ControlField:
    """clip(-rho*q/alpha): the projection form of the first-order condition."""
    raw = -rho.restrict_omega() * q.restrict_omega() / spec.alpha
    return project(spec, raw)


@dataclass
class KKTReport:
    """First-order residual and gradient-sign classification on the window.

    residual is ||u - clip(-rho*q/alpha)|| in L2(omega_T).  The masks
    partition the window up to ties: lower_active where g exceeds the tie
    threshold (control pinned at the lower bound at a stationary point),
    upper_active where g is below minus the threshold, inactive where |g|
    is within the threshold.
    """

    g: np.ndarray
    residual: float
    lower_active: np.ndarray
    upper_active: np.ndarray
    inactive: np.ndarray

    def to_text(self) -> str:
        lines = [
            f"kkt_residual = {self.residual:.17g}",
            f"gradient_sup = {float(np.max(np.abs(self.g))):.17g}",
            f"n_lower_active = {int(self.lower_active.sum())}",
            f"n_upper_active = {int(self.upper_active.sum())}",
            f"n_inactive = {int(self.inactive.sum())}",
        ]
        return "\n".join(lines) + "\n"

    def masks_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level", "node", "lower_active", "upper_active", "inactive"])
            nt, n_omega = self.g.shape
            for k in range(nt):
                for i in range(n_omega):
                    writer.writerow([k + 1, i,
                                     int(self.lower_active[k, i]),
                                     int(self.upper_active[k, i]),
                                     int(self.inactive[k, i])])


def kkt_residual(spec: ProblemSpec, u: ControlField,
                 rho: TimeField | None = None, q: TimeField | None = None) -> KKTReport:
    if rho is None or q is None:
        g, rho, q = gradient(spec, u)
    else:
        g = spec.alpha * u.values + rho.restrict_omega() * q.restrict_omega()
    target = fixed_point_target(spec, rho, q)
    residual = spec.control_norm(u.values - target.values)
    tie = TIE_REL * float(np.max(np.abs(g))) if g.size else 0.0
    lower = g > tie
    upper = g < -tie
    return KKTReport(g=g, residual=residual, lower_active=lower, upper_active=upper,
                     inactive=~(lower | upper))


def active_set(spec: ProblemSpec, u: ControlField, tau: float,
               g: np.ndarray | None = None) -> np.ndarray:
    """Strongly active window points: |alpha*u + rho*q| strictly above tau."""
    if tau < 0:
        raise ValueError(f"activity threshold must be nonnegative, got {tau}")
    if g is None:
        g, _, _ = gradient(spec, u)
    return np.abs(g) > tau


def critical_cone_project(spec: ProblemSpec, u: ControlField, tau: float, v: np.ndarray,
                          g: np.ndarray | None = None) -> np.ndarray:
    """Pointwise L2 projection of a direction onto the tau-critical cone.

    Zero on the strongly active set; nonnegative part where the control sits
    at the lower bound (off the active set), nonpositive part at the upper
    bound; unchanged elsewhere.
    """
    active = active_set(spec, u, tau, g=g)
    box_tol = BOX_REL * (spec.vmax - spec.vmin)
    at_lower = (u.values - spec.vmin) <= box_tol
    at_upper = (spec.vmax - u.values) <= box_tol
    out = np.asarray(v, dtype=float).copy()
    lower_free = at_lower & ~active
    upper_free = at_upper & ~active
    out[lower_free] = np.maximum(out[lower_free], 0.0)
    out[upper_free] = np.minimum(out[upper_free], 0.0)
    out[active] = 0.0
    return out


@dataclass
class ConditionReport:
    """Evaluation of a smallness condition: lhs against its bound."""

    lhs: float
    bound: float
    holds: bool

    @property
    def margin(self) -> float:
        return self.bound - self.lhs


def uniqueness_condition(spec: ProblemSpec) -> ConditionReport:
    """Local-uniqueness smallness test: 3 e^(3 theta T) (||rho0||_inf^2 +
    ||target||_inf^2) < alpha."""
    lhs = 3.0 * np.exp(3.0 * spec.theta * spec.grid.T) * (
        spec.rho0_sup**2 + spec.target_sup**2)
    return ConditionReport(lhs=float(lhs), bound=spec.alpha, holds=bool(lhs < spec.alpha))


def ssc_smallness(spec: ProblemSpec, c_user: float = 0.0) -> ConditionReport:
    """Sufficient-condition smallness test:
    (6 + C theta) e^(2 theta T) (||rho0||_inf + ||target||_inf) ||rho0||_inf <= alpha/2.

    The constant C depends on the domain and order in a way that is not
    computable here; the caller supplies it (default 0, the most optimistic).
    """
    if c_user < 0:
        raise ValueError(f"constant must be nonnegative, got {c_user}")
    lhs = (6.0 + c_user * spec.theta) * np.exp(2.0 * spec.theta * spec.grid.T) * (
        spec.rho0_sup + spec.target_sup) * spec.rho0_sup
    bound = 0.5 * spec.alpha
    return ConditionReport(lhs=float(lhs), bound=bound, holds=bool(lhs <= bound))


@dataclass
class CoercivityReport:
    """Sampled Rayleigh quotients of the Hessian over the critical cone."""

    status: str  # "ok" or "inconclusive"
    min_quotient: float
    n_used: int
    alpha: float

    @property
    def holds_sufficient(self) -> bool:
        return self.status == "ok" and self.min_quotient >= 0.5 * self.alpha

    @property
    def holds_necessary(self) -> bool:
        return self.status == "ok" and self.min_quotient >= 0.0


def check_coercivity(spec: ProblemSpec, u: ControlField, tau: float, n_samples: int,
                     seed: int = 0, zero_tol: float | None = None) -> CoercivityReport:
    """Sample random directions projected into the tau-critical cone and
    report the minimum Hessian Rayleigh quotient J''(u)[v,v] / ||v||^2.

    zero_tol floors the activity threshold: at a numerically converged
    interior point the gradient field is round-off noise rather than an
    exact zero, and treating that noise as strong activity would collapse
    the cone to {0}.  The default floor is 1e-6 times the natural field
    magnitude alpha*theta + sup|rho| sup|q|.
    """
    g, rho, q = gradient(spec, u)
    if zero_tol is None:
        scale = spec.alpha * spec.theta + rho.linf() * q.linf()
        zero_tol = 1e-6 * scale
    tau_eff = max(tau, zero_tol)
    rng = np.random.default_rng(seed)
    quotients = []
    for _ in range(n_samples):
        raw = rng.standard_normal(u.values.shape)
        proj = critical_cone_project(spec, u, tau_eff, raw, g=g)
        norm = spec.control_norm(proj)
        if norm < 1e-10:
            continue
        direction = ControlField(proj, spec.grid)
        value = hessian_bilinear(spec, u, direction, direction, rho=rho, q=q)
        quotients.append(value / norm**2)
    if not quotients:
        return CoercivityReport(status="inconclusive", min_quotient=np.nan,
                                n_used=0, alpha=spec.alpha)
    return CoercivityReport(status="ok", min_quotient=float(min(quotients)),
                            n_used=len(quotients), alpha=spec.alpha)
