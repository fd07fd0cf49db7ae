"""Forward solver for the split, fully discrete Boussinesq system.

Each time step solves, in order,

1. the temperature advection-diffusion problem (transport by y^{n-1},
   heat-flux or Robin control on the control segments),
2. the velocity advection-diffusion problem for the intermediate velocity
   (transport by y^{n-1}, old pressure gradient, buoyancy theta^n e_2),
3. the incremental projection: a mass-matrix saddle system for
   (y^n, p^n - p^{n-1}) enforcing b(q, y^n) = 0 on the coarse pressure space.

The per-step factorizations are kept on the returned trajectory so that the
adjoint and tangent-linear sweeps reuse them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .problem import Objective, ProblemSetup, interpolate_target

__all__ = [
    "SolverBreakdown",
    "StateTrajectory",
    "StepSystem",
    "ProjectionSystem",
    "solve_state",
    "evaluate_objective",
    "state_residuals",
    "tracking_error_series",
    "vorticity_series",
    "divergence_residual",
]


class SolverBreakdown(RuntimeError):
    """A linear system of the time stepping could not be solved."""

    def __init__(self, step: int, equation: str, detail: str = ""):
        self.step = step
        self.equation = equation
        msg = f"linear solve failed at step {step} ({equation})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


def _factor(mat, step, equation):
    try:
        lu = spla.splu(sp.csc_matrix(mat))
    except RuntimeError as exc:
        raise SolverBreakdown(step, equation, str(exc)) from None
    return lu


def _checked(x, step, equation):
    if not np.all(np.isfinite(x)):
        raise SolverBreakdown(step, equation, "non-finite solution")
    return x


class ReducedSystem:
    """Square system restricted to free dofs, with a cached LU factor."""

    def __init__(self, mat: sp.csr_matrix, free: np.ndarray, fixed: np.ndarray,
                 step: int, equation: str):
        self.free = free
        self.fixed = fixed
        self.step = step
        self.equation = equation
        mat = sp.csr_matrix(mat)
        self.coupling = mat[free][:, fixed]
        self.lu = _factor(mat[free][:, free], step, equation)

    def solve(self, rhs_full: np.ndarray, fixed_values=None, n_total=None) -> np.ndarray:
        """Solve for the full vector given the full right-hand side."""
        n_total = rhs_full.size if n_total is None else n_total
        out = np.zeros(n_total)
        rhs = rhs_full[self.free]
        if fixed_values is not None and self.fixed.size:
            rhs = rhs - self.coupling @ fixed_values
            out[self.fixed] = fixed_values
        out[self.free] = _checked(self.lu.solve(rhs), self.step, self.equation)
        return out

    def solve_transpose(self, rhs_full: np.ndarray) -> np.ndarray:
        """Solve the transposed free-free system; constrained entries are zero."""
        out = np.zeros(rhs_full.size)
        out[self.free] = _checked(self.lu.solve(rhs_full[self.free], trans="T"),
                                  self.step, self.equation + " (transpose)")
        return out


@dataclass
class StepSystem:
    theta: ReducedSystem
    velocity: ReducedSystem


class ProjectionSystem:
    """Saddle system of the projection substep (time independent).

    Unknowns are the free velocity dofs and the pressure increment on all
    coarse nodes.  When the constant pressure lies in the kernel of the
    transposed divergence (all normal velocities prescribed), one Lagrange
    multiplier row fixes the mean of the increment to zero.
    """

    def __init__(self, setup: ProblemSetup):
        ops = setup.ops
        nv2 = 2 * setup.n_nodes
        fixed = setup.projection_dirichlet
        free = np.setdiff1d(np.arange(nv2), fixed)
        self.free, self.fixed = free, fixed
        self.dt = setup.dt
        Mv = ops.Mv
        B = ops.B
        self.Mv = Mv
        self.B = B
        self.Mv_ff = Mv[free][:, free]
        self.Mv_fd = Mv[free][:, fixed]
        self.B_f = B[:, free].tocsr()
        self.B_d = B[:, fixed].tocsr()
        self.n_p = B.shape[0]
        col_sums = np.asarray(self.B_f.sum(axis=0)).ravel()
        scale = abs(B).max()
        self.mean_constraint = bool(np.max(np.abs(col_sums), initial=0.0) <= 1e-11 * scale)
        blocks = [[self.Mv_ff / self.dt, -self.B_f.T], [-self.B_f, None]]
        if self.mean_constraint:
            m = sp.csr_matrix(ops.pressure_mean[:, None])
            blocks[0].append(None)
            blocks[1].append(m)
            blocks.append([None, m.T, None])
        self.matrix = sp.bmat(blocks, format="csc")
        self.lu = _factor(self.matrix, 0, "projection")
        self.n_free = free.size

    def _solve(self, rhs, step, label):
        return _checked(self.lu.solve(rhs), step, label)

    def solve(self, y_tilde, fixed_values, step=0):
        """Return ``(y, pressure_increment)``."""
        r1 = self.Mv[self.free] @ y_tilde / self.dt
        r2 = np.zeros(self.n_p)
        if self.fixed.size:
            r1 = r1 - self.Mv_fd @ fixed_values / self.dt
            r2 = self.B_d @ fixed_values
        rhs = np.concatenate([r1, r2, [0.0]] if self.mean_constraint else [r1, r2])
        sol = self._solve(rhs, step, "projection")
        y = np.zeros(self.Mv.shape[0])
        y[self.free] = sol[: self.n_free]
        y[self.fixed] = fixed_values
        return y, sol[self.n_free: self.n_free + self.n_p]

    def solve_block(self, r_velocity_free, r_pressure, step=0, label="projection"):
        """Solve with an explicit right-hand side (free velocity block, pressure block)."""
        parts = [r_velocity_free, r_pressure]
        if self.mean_constraint:
            parts.append([0.0])
        sol = self._solve(np.concatenate(parts), step, label)
        return sol[: self.n_free], sol[self.n_free: self.n_free + self.n_p]


@dataclass(eq=False)
class StateTrajectory:
    """Fields of one forward run; row ``n`` holds time level ``n``.

    ``y_tilde[0]`` is unused (zero).  ``systems[n]`` keeps the factorized
    step matrices (index 0 unused).
    """

    y: np.ndarray
    y_tilde: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    control: np.ndarray
    systems: list = field(default_factory=list, repr=False)
    projection: ProjectionSystem | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.y.shape[0] - 1


def _projection_system(setup: ProblemSetup) -> ProjectionSystem:
    cache = setup.__dict__.setdefault("_projection_cache", {})
    key = (setup.dt, setup.projection)
    if key not in cache:
        cache[key] = ProjectionSystem(setup)
    return cache[key]


def theta_matrix(setup: ProblemSetup, y_prev: np.ndarray) -> sp.csr_matrix:
    ops = setup.ops
    mat = ops.M / setup.dt + ops.D + setup.robin_matrix
    if setup.convection:
        mat = mat + ops.convection_e(y_prev)
    return mat.tocsr()


def velocity_matrix(setup: ProblemSetup, y_prev: np.ndarray) -> sp.csr_matrix:
    ops = setup.ops
    mat = ops.Mv / setup.dt + ops.A
    if setup.convection:
        mat = mat + ops.convection_c(y_prev)
    return mat.tocsr()


def solve_state(setup: ProblemSetup, v, keep_factors: bool = True) -> StateTrajectory:
    """March the split scheme for n = 1..N under control ``v`` of shape (N, n_c)."""
    v = setup.control.check(v)
    ops = setup.ops
    N, n = setup.N, setup.n_nodes
    dt = setup.dt
    y = np.zeros((N + 1, 2 * n))
    yt = np.zeros((N + 1, 2 * n))
    theta = np.zeros((N + 1, n))
    p = np.zeros((N + 1, ops.B.shape[0]))
    y[0] = setup.initial_velocity()
    theta[0] = setup.initial_temperature()

    th_fixed, _ = setup.theta_dirichlet
    th_free = np.setdiff1d(np.arange(n), th_fixed)
    u_fixed = setup.velocity_dirichlet
    u_free = np.setdiff1d(np.arange(2 * n), u_fixed)
    proj = _projection_system(setup)
    load = setup.control_load
    systems = [None]
    has_flux = bool(setup.theta_flux_tags)

    for k in range(1, N + 1):
        t = setup.time(k)
        # temperature
        tsys = ReducedSystem(theta_matrix(setup, y[k - 1]), th_free, th_fixed, k, "temperature")
        rhs = ops.M @ theta[k - 1] / dt + load @ v[k - 1]
        if has_flux:
            rhs = rhs + setup.theta_boundary_load(t)
        theta[k] = tsys.solve(rhs, setup.theta_dirichlet_values(t))
        # intermediate velocity
        vsys = ReducedSystem(velocity_matrix(setup, y[k - 1]), u_free, u_fixed, k, "velocity")
        rhs = ops.Mv @ y[k - 1] / dt + ops.B.T @ p[k - 1]
        rhs[n:] += ops.M @ theta[k]
        yt[k] = vsys.solve(rhs, setup.velocity_values(u_fixed, t))
        # projection
        y[k], dp = proj.solve(yt[k], setup.velocity_values(proj.fixed, t), step=k)
        p[k] = p[k - 1] + dp
        systems.append(StepSystem(tsys, vsys) if keep_factors else None)

    return StateTrajectory(y=y, y_tilde=yt, p=p, theta=theta, control=v.copy(),
                           systems=systems, projection=proj)


def ensure_systems(setup: ProblemSetup, state: StateTrajectory) -> list:
    """Step factorizations of ``state``, rebuilt if they were not kept."""
    if state.systems and all(s is not None for s in state.systems[1:]):
        return state.systems
    n = setup.n_nodes
    th_fixed, _ = setup.theta_dirichlet
    th_free = np.setdiff1d(np.arange(n), th_fixed)
    u_fixed = setup.velocity_dirichlet
    u_free = np.setdiff1d(np.arange(2 * n), u_fixed)
    systems = [None]
    for k in range(1, setup.N + 1):
        systems.append(StepSystem(
            ReducedSystem(theta_matrix(setup, state.y[k - 1]), th_free, th_fixed, k, "temperature"),
            ReducedSystem(velocity_matrix(setup, state.y[k - 1]), u_free, u_fixed, k, "velocity"),
        ))
    state.systems = systems
    if state.projection is None:
        state.projection = _projection_system(setup)
    return systems


def state_residuals(setup: ProblemSetup, state: StateTrajectory) -> np.ndarray:
    """Objective source per step: gradient of the state term w.r.t. y^n.

    Row ``n`` (1..N) is ``Mv (y^n - y_d^n)`` for tracking and ``W y^n`` for
    the vorticity objective, scaled by the tracking weight; row 0 is zero.
    """
    ops = setup.ops
    out = np.zeros_like(state.y)
    for k in range(1, setup.N + 1):
        if setup.objective is Objective.TRACKING:
            out[k] = ops.Mv @ (state.y[k] - interpolate_target(setup, k))
        else:
            out[k] = ops.W @ state.y[k]
    return setup.tracking_weight * out


def state_term(setup: ProblemSetup, y_levels: np.ndarray) -> float:
    """(dt/2) sum_n of the squared tracking error or vorticity norm."""
    ops = setup.ops
    total = 0.0
    for k in range(1, setup.N + 1):
        if setup.objective is Objective.TRACKING:
            e = y_levels[k] - interpolate_target(setup, k)
            total += e @ (ops.Mv @ e)
        else:
            total += y_levels[k] @ (ops.W @ y_levels[k])
    return 0.5 * setup.dt * setup.tracking_weight * total


def evaluate_objective(setup: ProblemSetup, state: StateTrajectory, v=None) -> float:
    """Discrete objective: state term plus (alpha/2) ||v||^2 in the control space."""
    v = state.control if v is None else setup.control.check(v)
    ctrl = setup.control
    return state_term(setup, state.y) + 0.5 * setup.alpha * ctrl.inner(v, v)


def tracking_error_series(setup: ProblemSetup, state: StateTrajectory) -> np.ndarray:
    """||y^n - y_d^n|| / ||y_d^n|| in L2 for n = 1..N."""
    Mv = setup.ops.Mv
    out = np.empty(setup.N)
    for k in range(1, setup.N + 1):
        yd = interpolate_target(setup, k)
        e = state.y[k] - yd
        out[k - 1] = np.sqrt(e @ (Mv @ e)) / np.sqrt(yd @ (Mv @ yd))
    return out


def vorticity_series(setup: ProblemSetup, state: StateTrajectory) -> np.ndarray:
    """||curl y^n|| in L2 for n = 1..N."""
    W = setup.ops.W
    return np.array([np.sqrt(max(state.y[k] @ (W @ state.y[k]), 0.0))
                     for k in range(1, setup.N + 1)])


def divergence_residual(setup: ProblemSetup, state: StateTrajectory) -> np.ndarray:
    """max_q |b(q_H, y^n)| over coarse basis functions, for n = 1..N."""
    B = setup.ops.B
    return np.array([np.max(np.abs(B @ state.y[k])) for k in range(1, setup.N + 1)])
