"""Problem instances for the tracking-type bilinear control problem.

A ProblemSpec bundles the grid, the fractional order, the regularization
weight, the control box, and the sampled initial and target states.  The
cost is

    J(v) = 1/2 ||rho(T) - rho_target||_L2^2 + alpha/2 ||v||_L2(omega x (0,T))^2

subject to rho_t + (-Delta)^s rho = v rho on the control window, with zero
exterior condition and rho(0) = rho0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fracop import FractionalOperator, Grid, assemble_operator


@dataclass
class ProblemSpec:
    """Full control problem instance.

    vmin/vmax are the box bounds on the control (vmax > vmin); rho0 and
    rho_target are values at the interior nodes.  rho0_sup/target_sup may
    declare the analytic sup-norms of the underlying profiles; they default
    to the sampled max.  Only 1-D domains are supported (ndim == 1).
    """

    grid: Grid
    s: float
    alpha: float
    vmin: float
    vmax: float
    rho0: np.ndarray
    rho_target: np.ndarray
    ndim: int = 1
    rho0_sup: float | None = None
    target_sup: float | None = None
    _op: FractionalOperator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.ndim != 1:
            raise ValueError(f"only 1-D domains are supported, got ndim={self.ndim}")
        if not self.alpha > 0:
            raise ValueError(f"regularization weight must be positive, got alpha={self.alpha}")
        if not self.vmax > self.vmin:
            raise ValueError(f"control box needs vmax > vmin, got [{self.vmin}, {self.vmax}]")
        self.rho0 = np.asarray(self.rho0, dtype=float)
        self.rho_target = np.asarray(self.rho_target, dtype=float)
        for name, arr in (("rho0", self.rho0), ("rho_target", self.rho_target)):
            if arr.shape != (self.grid.n,):
                raise ValueError(f"{name} must have length n={self.grid.n}, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if self.rho0_sup is None:
            self.rho0_sup = float(np.max(np.abs(self.rho0))) if self.grid.n else 0.0
        if self.target_sup is None:
            self.target_sup = float(np.max(np.abs(self.rho_target)))

    @property
    def theta(self) -> float:
        """Box magnitude max(|vmin|, |vmax|); bounds the sup-norm of any admissible control."""
        return max(abs(self.vmin), abs(self.vmax))

    @property
    def operator(self) -> FractionalOperator:
        if self._op is None:
            self._op = assemble_operator(self.grid, self.s)
        return self._op

    def space_dot(self, u, v) -> float:
        """Discrete L2(domain) inner product."""
        return self.grid.dx * float(np.dot(u, v))

    def control_dot(self, a, b) -> float:
        """Discrete L2(omega x (0,T)) inner product of control-shaped arrays."""
        return self.grid.dx * self.grid.dt * float(np.sum(a * b))

    def control_norm(self, a) -> float:
        return float(np.sqrt(max(self.control_dot(a, a), 0.0)))


def bump_profile(grid: Grid, amplitude: float) -> np.ndarray:
    """amplitude * (1 - xi^2)_+ with xi the domain rescaled to (-1, 1)."""
    xi = (2.0 * grid.nodes - grid.a - grid.b) / (grid.b - grid.a)
    return amplitude * np.maximum(1.0 - xi**2, 0.0)


def eigen_profile(spec_or_grid, s: float | None = None, k: int = 1) -> np.ndarray:
    """k-th eigenvector of the discrete operator, sup-normalized with positive peak.

    Accepts a ProblemSpec (reusing its operator) or a (Grid, s) pair.
    """
    if isinstance(spec_or_grid, ProblemSpec):
        op = spec_or_grid.operator
    else:
        op = assemble_operator(spec_or_grid, s)
    if not 1 <= k <= op.n:
        raise ValueError(f"eigenvector index must lie in 1..{op.n}, got {k}")
    _, vecs = np.linalg.eigh(op.matrix)
    phi = vecs[:, k - 1]
    peak = phi[np.argmax(np.abs(phi))]
    return phi / peak


def benchmark_problem(n: int = 127, nt: int = 200) -> ProblemSpec:
    """Small-data reference instance used across the verification harness.

    Omega = (-1, 1), s = 0.5, T = 0.5, window (-0.5, 0.5), alpha = 1,
    box [-1, 1], rho0 = bump(0.1), target = bump(0.05).  The data are small
    enough that the local-uniqueness condition holds with a wide margin.
    """
    grid = Grid.from_window(a=-1.0, b=1.0, n=n, window=(-0.5, 0.5), T=0.5, nt=nt)
    return ProblemSpec(
        grid=grid,
        s=0.5,
        alpha=1.0,
        vmin=-1.0,
        vmax=1.0,
        rho0=bump_profile(grid, 0.1),
        rho_target=bump_profile(grid, 0.05),
    )
