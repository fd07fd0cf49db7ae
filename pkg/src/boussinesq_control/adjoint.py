"""Backward sweep of the fully discrete adjoint system and the control gradient.

The adjoint steps are the exact transposes of the forward substeps, so the
gradient is the true derivative of the discrete objective.  Variables follow
the forward ones: ``z`` (projection step), ``z_tilde`` (velocity
advection-diffusion step), ``xi`` (pressure) and ``zeta`` (temperature).
For n = N, ..., 1:

* (z^n, xi^n) from the projection saddle system with source
  r^n + Mv z~^{n+1}/dt - c(., y~^{n+1}, z~^{n+1}) - e(., theta^{n+1}, zeta^{n+1})
  and divergence data accumulated from z~^{k}, k > n;
* z~^n from the transposed velocity advection-diffusion matrix with source
  Mv z^n / dt;
* zeta^n from the transposed temperature matrix with source
  M zeta^{n+1}/dt + M z~^n_2.

The gradient with respect to the control is ``zeta^n|_{Gamma_c} + alpha v^n``
as a nodal field (the Riesz representer in the control inner product).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import gradient_coupling_scalar, gradient_coupling_vector
from .problem import ProblemSetup
from .state import StateTrajectory, ensure_systems, state_residuals

__all__ = ["AdjointTrajectory", "solve_adjoint", "compute_gradient"]


@dataclass(eq=False)
class AdjointTrajectory:
    """Adjoint fields; row ``n`` holds level ``n`` (rows 0 unused, N+1 zero)."""

    z: np.ndarray
    z_tilde: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray

    @property
    def N(self) -> int:
        return self.z.shape[0] - 2


def solve_adjoint(setup: ProblemSetup, state: StateTrajectory, source=None) -> AdjointTrajectory:
    """Solve the adjoint system backwards in time.

    ``source`` overrides the objective's state gradient (rows 1..N); by
    default it is :func:`~boussinesq_control.state.state_residuals`.
    """
    ops = setup.ops
    N, n = setup.N, setup.n_nodes
    dt = setup.dt
    systems = ensure_systems(setup, state)
    proj = state.projection
    r = state_residuals(setup, state) if source is None else np.asarray(source, dtype=float)
    if r.shape != state.y.shape:
        raise ValueError(f"adjoint source must have shape {state.y.shape}")
    fine = setup.pair.fine

    z = np.zeros((N + 2, 2 * n))
    zt = np.zeros((N + 2, 2 * n))
    zeta = np.zeros((N + 2, n))
    xi = np.zeros((N + 1, ops.B.shape[0]))
    div_acc = np.zeros(ops.B.shape[0])

    for k in range(N, 0, -1):
        rhs = r[k].copy()
        if k < N:
            rhs += ops.Mv @ zt[k + 1] / dt
            if setup.convection:
                rhs -= gradient_coupling_vector(state.y_tilde[k + 1], fine).T @ zt[k + 1]
                rhs -= gradient_coupling_scalar(state.theta[k + 1], fine).T @ zeta[k + 1]
        z_free, xi_k = proj.solve_block(rhs[proj.free], div_acc, step=k,
                                        label="adjoint projection")
        z[k, proj.free] = z_free
        xi[k] = -xi_k

        sysk = systems[k]
        zt[k] = sysk.velocity.solve_transpose(ops.Mv @ z[k] / dt)
        div_acc = div_acc + ops.B @ zt[k]

        rhs = ops.M @ (zeta[k + 1] / dt + zt[k, n:])
        zeta[k] = sysk.theta.solve_transpose(rhs)

    return AdjointTrajectory(z=z, z_tilde=zt, xi=xi, zeta=zeta)


def compute_gradient(setup: ProblemSetup, adj: AdjointTrajectory, v) -> np.ndarray:
    """Gradient trajectory ``g^n = zeta^n|_{Gamma_c} + alpha v^n``, shape (N, n_c)."""
    v = setup.control.check(v)
    nodes = setup.control.nodes
    return adj.zeta[1: setup.N + 1][:, nodes] + setup.alpha * v
