"""Limited-memory BFGS over the boundary control space.

Inner products are the time-weighted L2(Gamma_c) product of the control
space, and the step length comes from the linearized-state model
(:func:`~boussinesq_control.linearized.step_size`), so every iteration costs
one forward, one adjoint and one tangent-linear sweep.
"""
from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .adjoint import compute_gradient, solve_adjoint
from .linearized import DegenerateDirection, solve_linearized, step_size
from .problem import ControlSpace, ProblemSetup
from .state import evaluate_objective, solve_state

__all__ = [
    "LbfgsMemory",
    "IterationRecord",
    "LbfgsResult",
    "NonfiniteObjective",
    "two_loop_direction",
    "lbfgs_solve",
    "objective_and_gradient",
]

log = logging.getLogger(__name__)


class NonfiniteObjective(FloatingPointError):
    """NaN or Inf in the objective or gradient; ``u`` holds the offending iterate."""

    def __init__(self, message: str, u: np.ndarray, k: int):
        super().__init__(message)
        self.u = u
        self.k = k


class LbfgsMemory:
    """Ring buffer of (du, dg) pairs; pairs with non-positive curvature are rejected."""

    def __init__(self, m: int, inner: Callable[[np.ndarray, np.ndarray], float]):
        if m < 1:
            raise ValueError("memory length must be at least 1")
        self.m = m
        self.inner = inner
        self.pairs: deque = deque(maxlen=m)
        self.rejected = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def push(self, du: np.ndarray, dg: np.ndarray) -> bool:
        curvature = self.inner(dg, du)
        if not curvature > 0.0 or not math.isfinite(curvature):
            self.rejected += 1
            log.info("skipping L-BFGS pair with curvature %.3e", curvature)
            return False
        self.pairs.append((np.array(du, copy=True), np.array(dg, copy=True), 1.0 / curvature))
        return True


def two_loop_direction(mem: LbfgsMemory, g: np.ndarray, H0=1.0) -> np.ndarray:
    """Return ``-H g`` for the limited-memory inverse Hessian ``H``.

    ``H0`` is the initial inverse Hessian: a scalar or an array broadcast
    against ``g`` (diagonal scaling of the coefficients).
    """
    d = -np.asarray(g, dtype=float)
    taus = []
    for du, dg, eta in reversed(mem.pairs):
        tau = eta * mem.inner(du, d)
        d = d - tau * dg
        taus.append(tau)
    d = H0 * d
    for (du, dg, eta), tau in zip(mem.pairs, reversed(taus)):
        kappa = eta * mem.inner(dg, d)
        d = d + (tau - kappa) * du
    return d


@dataclass(frozen=True)
class IterationRecord:
    k: int
    J: float
    grad_rel: float
    rho: float
    seconds: float


@dataclass
class LbfgsResult:
    u: np.ndarray
    history: list
    converged: bool
    message: str
    J: float
    best_k: int
    state: object = field(default=None, repr=False)

    def __iter__(self):
        yield self.u
        yield self.history


def objective_and_gradient(setup: ProblemSetup, u):
    """One forward and one adjoint sweep: returns (J, g, state)."""
    state = solve_state(setup, u)
    J = evaluate_objective(setup, state, u)
    g = compute_gradient(setup, solve_adjoint(setup, state), u)
    return J, g, state


def _finite(J, g, u, k):
    if not math.isfinite(J) or not np.all(np.isfinite(g)):
        raise NonfiniteObjective(f"non-finite objective or gradient at iteration {k}", u, k)


def lbfgs_solve(setup: ProblemSetup, u0=None, m: int = 5, tol: float = 5e-3,
                max_iter: int = 100, H0=1.0, max_step: Optional[float] = None,
                callback: Optional[Callable] = None) -> LbfgsResult:
    """Minimize the discrete objective from ``u0`` (default: zero control).

    Stops when ||g_k|| / ||g_0|| < tol in the control norm or after
    ``max_iter`` iterations, and returns the iterate with the smallest
    objective seen.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    ctrl: ControlSpace = setup.control
    u = ctrl.zeros() if u0 is None else np.array(ctrl.check(u0), copy=True)
    start = time.perf_counter()

    J, g, state = objective_and_gradient(setup, u)
    _finite(J, g, u, 0)
    g0 = ctrl.norm(g)
    history = [IterationRecord(0, J, 1.0, 0.0, time.perf_counter() - start)]
    best = (J, u, 0, state)
    if callback is not None:
        callback(history[-1], u)
    if g0 == 0.0:
        return LbfgsResult(u, history, True, "initial control is stationary", J, 0, state)

    mem = LbfgsMemory(m, ctrl.inner)
    converged, message = False, "maximum number of iterations reached"
    k = 0
    while k < max_iter:
        d = two_loop_direction(mem, g, H0)
        sens = solve_linearized(setup, state, d)
        try:
            rho = step_size(setup, g, d, sens, max_step=max_step)
        except DegenerateDirection:
            log.warning("degenerate direction at iteration %d, using steepest descent", k)
            d = -g
            sens = solve_linearized(setup, state, d)
            try:
                rho = step_size(setup, g, d, sens, max_step=max_step)
            except DegenerateDirection:
                message = "degenerate steepest-descent direction"
                break
        u_new = u + rho * d
        J_new, g_new, state = objective_and_gradient(setup, u_new)
        _finite(J_new, g_new, u_new, k + 1)
        mem.push(u_new - u, g_new - g)
        u, g, J = u_new, g_new, J_new
        k += 1
        rel = ctrl.norm(g) / g0
        history.append(IterationRecord(k, J, rel, rho, time.perf_counter() - start))
        log.info("iter %4d  J=%.8e  |g|/|g0|=%.3e  rho=%.4e", k, J, rel, rho)
        if callback is not None:
            callback(history[-1], u)
        if J < best[0]:
            best = (J, u, k, state)
        if rel < tol:
            converged, message = True, "relative gradient below tolerance"
            break

    J_best, u_best, k_best, state_best = best
    return LbfgsResult(u_best, history, converged, message, J_best, k_best, state_best)
