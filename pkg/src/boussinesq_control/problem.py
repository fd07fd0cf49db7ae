"""Problem description: coefficients, boundary data, objective and presets."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .fem import FemOperators
from .mesh import MeshPair, SegmentTag, build_reactor, build_unit_square

__all__ = [
    "Objective",
    "ProjectionVariant",
    "ThetaBC",
    "ProblemSetup",
    "ControlSpace",
    "example1",
    "example2",
    "cavity_target",
    "inflow_ramp",
    "interpolate_target",
    "viscosities_from",
]


class Objective(enum.Enum):
    TRACKING = "tracking"
    VORTICITY = "vorticity"


class ProjectionVariant(enum.Enum):
    """Boundary condition of the projection substep.

    NORMAL_TRACE constrains only the normal velocity component on walls and
    inlets; FULL_DIRICHLET constrains both components there.
    """

    NORMAL_TRACE = "normal_trace"
    FULL_DIRICHLET = "full_dirichlet"


VelocityData = Optional[Callable[[np.ndarray, np.ndarray, float], tuple]]


@dataclass(frozen=True)
class ThetaBC:
    """Temperature condition on one boundary segment.

    kind is ``"dirichlet"`` (theta = value), ``"neumann"`` (flux = value) or
    ``"robin"`` (flux + theta = value).  On control segments the control is
    added to the flux / Robin data.
    """

    kind: str
    value: float | Callable = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "robin"):
            raise ValueError(f"unknown temperature condition {self.kind!r}")

    def evaluate(self, x, y, t) -> np.ndarray:
        if callable(self.value):
            return np.broadcast_to(np.asarray(self.value(x, y, t), dtype=float), x.shape)
        return np.full(x.shape, float(self.value))


def zero_velocity(x, y, t):
    return np.zeros_like(x), np.zeros_like(x)


def viscosities_from(pr: float, ra: float) -> tuple[float, float]:
    """(nu1, nu2) = (sqrt(Pr/Ra), 1/sqrt(Ra Pr))."""
    if pr <= 0 or ra <= 0:
        raise ValueError("Prandtl and Rayleigh numbers must be positive")
    return math.sqrt(pr / ra), 1.0 / math.sqrt(ra * pr)


def _phi(z):
    return z**2 * (z - 1.0) ** 2


def _dphi(z):
    return 2.0 * z * (z - 1.0) * (2.0 * z - 1.0)


def cavity_target(x, y, t):
    """Time-independent pinwheel velocity of the cavity example."""
    return 100.0 * _phi(x) * _dphi(y), -100.0 * _dphi(x) * _phi(y)


def inflow_ramp(t: float) -> float:
    """Inlet amplitude: linear ramp on (0,5), plateau on (5,10), ramp down on (10,15)."""
    if t <= 0.0:
        return 0.0
    if t <= 5.0:
        return t / 5.0
    if t < 10.0:
        return 1.0
    if t < 15.0:
        return (15.0 - t) / 5.0
    return 0.0


def reactor_inflow(x, y, t):
    return np.zeros_like(x), -4.0 * (x - 1.0 / 3.0) * (2.0 / 3.0 - x) * inflow_ramp(t)


class ControlSpace:
    """Boundary control space with the time-weighted L2(Gamma_c) product.

    A control trajectory is an ``(N, n_control_nodes)`` array of nodal values.
    """

    def __init__(self, nodes: np.ndarray, mass: sp.csr_matrix, dt: float, n_steps: int,
                 coords: np.ndarray):
        self.nodes = nodes
        self.mass = mass
        self.dt = dt
        self.n_steps = n_steps
        self.coords = coords

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_steps, self.nodes.size)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def inner(self, u, v) -> float:
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return float(self.dt * np.einsum("ni,ni->", u, (self.mass @ v.T).T))

    def norm(self, u) -> float:
        return math.sqrt(max(self.inner(u, u), 0.0))

    def check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != self.shape:
            raise ValueError(f"control trajectory must have shape {self.shape}, got {v.shape}")
        return v


@dataclass(eq=False)
class ProblemSetup:
    """Everything needed to run the discrete forward model.

    Boundary data are given per segment tag: ``velocity_bc[tag]`` is a
    function ``(x, y, t) -> (u1, u2)`` for a Dirichlet segment or ``None`` for
    a natural (do-nothing) segment; ``theta_bc[tag]`` is a :class:`ThetaBC`.
    ``control_tags`` lists the segments carrying the heat-flux control.
    """

    pair: MeshPair
    nu1: float
    nu2: float
    alpha: float
    T: float
    N: int
    control_tags: tuple
    velocity_bc: dict
    theta_bc: dict
    objective: Objective = Objective.TRACKING
    target: Optional[Callable] = None
    projection: ProjectionVariant = ProjectionVariant.NORMAL_TRACE
    y0: Optional[np.ndarray] = None
    theta0: Optional[np.ndarray] = None
    convection: bool = True
    name: str = "custom"
    tracking_weight: float = 1.0

    def __post_init__(self):
        if not (self.nu1 > 0 and self.nu2 > 0):
            raise ValueError("nu1 and nu2 must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.T > 0:
            raise ValueError("final time must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("number of time steps must be a positive integer")
        self.N = int(self.N)
        self.objective = Objective(self.objective)
        self.projection = ProjectionVariant(self.projection)
        tags = self.pair.fine.tags()
        for label, bcs in (("velocity", self.velocity_bc), ("temperature", self.theta_bc)):
            missing = tags - set(bcs)
            if missing:
                names = ", ".join(sorted(t.value for t in missing))
                raise ValueError(f"{label} boundary condition missing for: {names}")
        if not self.control_tags:
            raise ValueError("at least one control segment is required")
        for tag in self.control_tags:
            if tag not in tags:
                raise ValueError(f"control segment {tag.value} is not on the mesh")
            if self.theta_bc[tag].kind == "dirichlet":
                raise ValueError(f"control segment {tag.value} has a Dirichlet temperature")
        if self.objective is Objective.TRACKING and self.target is None:
            raise ValueError("tracking objective needs a target velocity")
        n = self.pair.fine.n_nodes
        if self.y0 is not None and np.shape(self.y0) != (2 * n,):
            raise ValueError(f"y0 must have length {2 * n}")
        if self.theta0 is not None and np.shape(self.theta0) != (n,):
            raise ValueError(f"theta0 must have length {n}")

    # ------------------------------------------------------------------ time
    @property
    def dt(self) -> float:
        return self.T / self.N

    def time(self, n: int) -> float:
        return n * self.dt

    # ------------------------------------------------------------- operators
    @cached_property
    def ops(self) -> FemOperators:
        return FemOperators.build(self.pair, self.nu1, self.nu2)

    @property
    def n_nodes(self) -> int:
        return self.pair.fine.n_nodes

    @cached_property
    def control(self) -> ControlSpace:
        nodes = self.pair.fine.nodes_with_tag(*self.control_tags)
        gc = self.ops.boundary_mass(*self.control_tags)
        mass = gc[nodes][:, nodes].tocsr()
        return ControlSpace(nodes, mass, self.dt, self.N, self.pair.fine.nodes[nodes])

    @cached_property
    def control_load(self) -> sp.csr_matrix:
        """Map from control nodal values to the temperature load vector."""
        gc = self.ops.boundary_mass(*self.control_tags)
        return gc[:, self.control.nodes].tocsr()

    @cached_property
    def robin_matrix(self) -> sp.csr_matrix:
        tags = [t for t, bc in self.theta_bc.items() if bc.kind == "robin"]
        n = self.n_nodes
        if not tags:
            return sp.csr_matrix((n, n))
        return self.ops.boundary_mass(*tags)

    # ------------------------------------------------------ essential data
    def _segment_nodes(self):
        mesh = self.pair.fine
        out = []
        for (a, b), tag in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags):
            out.append((a, b, tag))
        return out

    @cached_property
    def theta_dirichlet(self) -> tuple[np.ndarray, list]:
        """Dirichlet temperature nodes and the tag that supplies each value."""
        owner: dict = {}
        for a, b, tag in self._segment_nodes():
            if self.theta_bc[tag].kind == "dirichlet":
                owner.setdefault(a, tag)
                owner.setdefault(b, tag)
        nodes = np.array(sorted(owner), dtype=np.int64)
        return nodes, [owner[i] for i in nodes.tolist()]

    def theta_dirichlet_values(self, t: float) -> np.ndarray:
        nodes, tags = self.theta_dirichlet
        xy = self.pair.fine.nodes
        out = np.empty(nodes.size)
        for tag in set(tags):
            mask = np.array([s is tag for s in tags], dtype=bool)
            pts = xy[nodes[mask]]
            out[mask] = self.theta_bc[tag].evaluate(pts[:, 0], pts[:, 1], t)
        return out

    @cached_property
    def theta_flux_tags(self) -> list:
        """Segments with non-zero prescribed (uncontrolled) flux or Robin data."""
        out = []
        for tag, bc in self.theta_bc.items():
            if bc.kind != "dirichlet" and (callable(bc.value) or bc.value != 0.0):
                out.append(tag)
        return out

    def theta_boundary_load(self, t: float) -> np.ndarray:
        load = np.zeros(self.n_nodes)
        xy = self.pair.fine.nodes
        for tag in self.theta_flux_tags:
            g = self.theta_bc[tag].evaluate(xy[:, 0], xy[:, 1], t)
            load += self.ops.boundary_mass(tag) @ g
        return load

    @cached_property
    def _velocity_owner(self) -> dict:
        owner: dict = {}
        for a, b, tag in self._segment_nodes():
            if self.velocity_bc[tag] is not None:
                owner.setdefault(a, tag)
                owner.setdefault(b, tag)
        return owner

    @cached_property
    def velocity_dirichlet(self) -> np.ndarray:
        """Constrained dofs of the advection-diffusion velocity substep."""
        n = self.n_nodes
        nodes = np.array(sorted(self._velocity_owner), dtype=np.int64)
        return np.concatenate([nodes, nodes + n])

    @cached_property
    def projection_dirichlet(self) -> np.ndarray:
        """Constrained dofs of the projection substep."""
        if self.projection is ProjectionVariant.FULL_DIRICHLET:
            return self.velocity_dirichlet
        n = self.n_nodes
        mesh = self.pair.fine
        dofs = set()
        for a, b, tag in self._segment_nodes():
            if self.velocity_bc[tag] is None:
                continue
            d = mesh.nodes[b] - mesh.nodes[a]
            if abs(d[0]) < 1e-12 * abs(d[1]):
                comp = 0
            elif abs(d[1]) < 1e-12 * abs(d[0]):
                comp = 1
            else:
                raise NotImplementedError("normal-trace projection needs axis-aligned walls")
            dofs.update((a + comp * n, b + comp * n))
        return np.array(sorted(dofs), dtype=np.int64)

    def velocity_values(self, dofs: np.ndarray, t: float) -> np.ndarray:
        """Prescribed velocity at the given (stacked) dofs."""
        n = self.n_nodes
        xy = self.pair.fine.nodes
        owner = self._velocity_owner
        out = np.empty(dofs.size)
        nodes = dofs % n
        comps = dofs // n
        tags = [owner[i] for i in nodes.tolist()]
        for tag in set(tags):
            mask = np.array([s is tag for s in tags], dtype=bool)
            pts = xy[nodes[mask]]
            u1, u2 = self.velocity_bc[tag](pts[:, 0], pts[:, 1], t)
            vals = np.stack([np.broadcast_to(u1, pts[:, 0].shape),
                             np.broadcast_to(u2, pts[:, 0].shape)], axis=1)
            out[mask] = vals[np.arange(mask.sum()), comps[mask]]
        return out

    # ---------------------------------------------------------- objective
    def initial_velocity(self) -> np.ndarray:
        if self.y0 is None:
            return np.zeros(2 * self.n_nodes)
        return np.array(self.y0, dtype=float)

    def initial_temperature(self) -> np.ndarray:
        if self.theta0 is None:
            return np.zeros(self.n_nodes)
        return np.array(self.theta0, dtype=float)

    @cached_property
    def _target_cache(self) -> dict:
        return {}

    def target_field(self, n: int) -> np.ndarray:
        return interpolate_target(self, n)


def interpolate_target(setup: ProblemSetup, n: int) -> np.ndarray:
    """Nodal interpolation of the target velocity at t_n (stacked components)."""
    if not 1 <= n <= setup.N:
        raise ValueError(f"time index must lie in 1..{setup.N}, got {n}")
    if setup.target is None:
        return np.zeros(2 * setup.n_nodes)
    t = setup.time(n)
    cache = setup._target_cache
    if t not in cache:
        xy = setup.pair.fine.nodes
        u1, u2 = setup.target(xy[:, 0], xy[:, 1], t)
        field = np.concatenate([np.broadcast_to(u1, xy[:, 0].shape),
                                np.broadcast_to(u2, xy[:, 0].shape)]).astype(float)
        field.setflags(write=False)
        cache[t] = field
    return cache[t]


def example1(n: int = 16, N: Optional[int] = None, T: float = 5.0, alpha: float = 5e-5,
             nu1: float = 1.0 / 100.0, nu2: float = 1.0 / 72.0,
             projection=ProjectionVariant.NORMAL_TRACE, objective=Objective.TRACKING,
             convection: bool = True) -> ProblemSetup:
    """Velocity tracking in the heated cavity; control on the two side walls.

    Default time step is 1/16 (``N = 16 T``).
    """
    if N is None:
        N = int(round(16 * T))
    pair = build_unit_square(n)
    zero = zero_velocity
    return ProblemSetup(
        pair=pair,
        nu1=nu1,
        nu2=nu2,
        alpha=alpha,
        T=T,
        N=N,
        control_tags=(SegmentTag.LEFT, SegmentTag.RIGHT),
        velocity_bc={t: zero for t in (SegmentTag.LEFT, SegmentTag.RIGHT,
                                        SegmentTag.TOP, SegmentTag.BOTTOM)},
        theta_bc={
            SegmentTag.LEFT: ThetaBC("neumann"),
            SegmentTag.RIGHT: ThetaBC("neumann"),
            SegmentTag.TOP: ThetaBC("dirichlet", 0.0),
            SegmentTag.BOTTOM: ThetaBC("dirichlet", 0.0),
        },
        objective=objective,
        target=cavity_target,
        projection=projection,
        convection=convection,
        name="example1",
    )


def example2(n: int = 12, N: Optional[int] = None, T: float = 15.0, alpha: float = 1e-4,
             nu1: float = 1.0 / 100.0, nu2: float = 1.0 / 72.0,
             projection=ProjectionVariant.NORMAL_TRACE, objective=Objective.VORTICITY,
             convection: bool = True) -> ProblemSetup:
    """Vorticity reduction in the reactor; Robin-type control on the side walls."""
    if N is None:
        N = int(round(16 * T))
    pair = build_reactor(n)
    zero = zero_velocity
    return ProblemSetup(
        pair=pair,
        nu1=nu1,
        nu2=nu2,
        alpha=alpha,
        T=T,
        N=N,
        control_tags=(SegmentTag.SIDE_WALL_LEFT, SegmentTag.SIDE_WALL_RIGHT),
        velocity_bc={
            SegmentTag.SUSCEPTOR: zero,
            SegmentTag.INLET_WALL: zero,
            SegmentTag.INLET: reactor_inflow,
            SegmentTag.SIDE_WALL_LEFT: zero,
            SegmentTag.SIDE_WALL_RIGHT: zero,
            SegmentTag.OUTLET_LEFT: None,
            SegmentTag.OUTLET_RIGHT: None,
        },
        theta_bc={
            SegmentTag.SUSCEPTOR: ThetaBC("dirichlet", 1.0),
            SegmentTag.INLET_WALL: ThetaBC("dirichlet", 0.0),
            SegmentTag.INLET: ThetaBC("dirichlet", 0.0),
            SegmentTag.SIDE_WALL_LEFT: ThetaBC("robin"),
            SegmentTag.SIDE_WALL_RIGHT: ThetaBC("robin"),
            SegmentTag.OUTLET_LEFT: ThetaBC("neumann"),
            SegmentTag.OUTLET_RIGHT: ThetaBC("neumann"),
        },
        objective=objective,
        target=None,
        projection=projection,
        convection=convection,
        name="example2",
    )
