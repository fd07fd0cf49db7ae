"""Tangent-linear (sensitivity) sweep and the model-based step size.

Linearizing the control-to-state map at the current iterate gives
y(u + rho d) ~ y(u) + rho w.  Substituting this into the objective yields a
quadratic in rho whose minimizer is used as the step length, so a line
search never needs extra forward solves.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fem import gradient_coupling_scalar, gradient_coupling_vector
from .problem import Objective, ProblemSetup, interpolate_target
from .state import StateTrajectory, ensure_systems

__all__ = [
    "DegenerateDirection",
    "SensitivityTrajectory",
    "solve_linearized",
    "step_size",
    "model_quadratic",
    "StepSizeInfo",
]

log = logging.getLogger(__name__)


class DegenerateDirection(ArithmeticError):
    """The curvature of the step-size model vanishes along the direction."""


@dataclass(eq=False)
class SensitivityTrajectory:
    """Directional derivatives of the states; row ``n`` is level ``n``."""

    w: np.ndarray
    w_tilde: np.ndarray
    q: np.ndarray
    phi: np.ndarray


def solve_linearized(setup: ProblemSetup, state: StateTrajectory, d) -> SensitivityTrajectory:
    """Sensitivities of (y, y~, p, theta) along the control direction ``d``."""
    d = setup.control.check(d)
    ops = setup.ops
    N, n = setup.N, setup.n_nodes
    dt = setup.dt
    systems = ensure_systems(setup, state)
    proj = state.projection
    load = setup.control_load
    fine = setup.pair.fine

    w = np.zeros((N + 1, 2 * n))
    wt = np.zeros((N + 1, 2 * n))
    phi = np.zeros((N + 1, n))
    q = np.zeros((N + 1, ops.B.shape[0]))
    no_fixed = np.zeros(proj.fixed.size)

    for k in range(1, N + 1):
        sysk = systems[k]
        rhs = ops.M @ phi[k - 1] / dt + load @ d[k - 1]
        if setup.convection:
            rhs -= gradient_coupling_scalar(state.theta[k], fine) @ w[k - 1]
        phi[k] = sysk.theta.solve(rhs)

        rhs = ops.Mv @ w[k - 1] / dt + ops.B.T @ q[k - 1]
        rhs[n:] += ops.M @ phi[k]
        if setup.convection:
            rhs -= gradient_coupling_vector(state.y_tilde[k], fine) @ w[k - 1]
        wt[k] = sysk.velocity.solve(rhs)

        w[k], dq = proj.solve(wt[k], no_fixed, step=k)
        q[k] = q[k - 1] + dq

    return SensitivityTrajectory(w=w, w_tilde=wt, q=q, phi=phi)


def _state_pairing(setup: ProblemSetup, a: np.ndarray, b: np.ndarray) -> float:
    """dt * sum_n <a^n, b^n> in the objective's state metric."""
    mat = setup.ops.Mv if setup.objective is Objective.TRACKING else setup.ops.W
    total = 0.0
    for k in range(1, setup.N + 1):
        total += a[k] @ (mat @ b[k])
    return setup.dt * setup.tracking_weight * total


@dataclass(frozen=True)
class StepSizeInfo:
    rho: float
    numerator: float
    denominator: float


def step_size(setup: ProblemSetup, g, d, sens: SensitivityTrajectory,
              max_step: float | None = None, info: bool = False):
    """Minimizer of the linearized objective model along ``d``.

    rho = -(g, d)_U / (dt sum ||w^n||^2 + alpha ||d||_U^2), where the state
    norm is L2 for tracking and the curl form for vorticity.
    """
    ctrl = setup.control
    num = ctrl.inner(g, d)
    den = _state_pairing(setup, sens.w, sens.w) + setup.alpha * ctrl.inner(d, d)
    if not den >= 1e-300:
        raise DegenerateDirection(f"step-size denominator {den!r} is not positive")
    rho = -num / den
    if max_step is not None and abs(rho) > max_step:
        rho = float(np.copysign(max_step, rho))
    log.debug("step size rho=%.6e numerator=%.6e denominator=%.6e", rho, num, den)
    if info:
        return StepSizeInfo(rho, num, den)
    return rho


def model_quadratic(setup: ProblemSetup, state: StateTrajectory, u, d,
                    sens: SensitivityTrajectory):
    """Return ``Q(rho)``, the objective with the states replaced by y + rho w."""
    ctrl = setup.control
    u = ctrl.check(u)
    d = ctrl.check(d)
    if setup.objective is Objective.TRACKING:
        base = np.array(state.y, copy=True)
        for k in range(1, setup.N + 1):
            base[k] -= interpolate_target(setup, k)
    else:
        base = state.y
    c0 = 0.5 * _state_pairing(setup, base, base) + 0.5 * setup.alpha * ctrl.inner(u, u)
    c1 = _state_pairing(setup, base, sens.w) + setup.alpha * ctrl.inner(u, d)
    c2 = 0.5 * _state_pairing(setup, sens.w, sens.w) + 0.5 * setup.alpha * ctrl.inner(d, d)

    def Q(rho: float) -> float:
        return c0 + c1 * rho + c2 * rho * rho

    Q.coefficients = (c0, c1, c2)
    return Q
