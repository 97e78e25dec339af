"""Time-dependent advection-diffusion transport of an unknown initial condition.

The state solves ``u_t - kappa * Laplace(u) + v . grad(u) = 0`` on the unit
square with zero-flux boundaries, ``u(., 0) = m``, discretized with P1
elements and implicit Euler:

    (M + dt * (kappa * K + C)) u_l = M u_{l-1},   l = 1..n_steps.

The system matrix is constant in time and in the parameter, so it is
factorized exactly once per model; the parameter-to-observable map is linear.
The transport matrix ``C`` is assembled in divergence form, which conserves
the discrete total mass to roundoff for velocities with no normal flow
through the boundary (see :func:`oedplace.mesh.advection_matrix`).
"""

from __future__ import annotations

import numpy as np

from .. import mesh as fem
from ..errors import ValidationError
from ..linalg import CheckedFactor
from .base import ForwardModel, Linearization, SensorArray

__all__ = [
    "RecirculatingVelocity",
    "load_velocity_csv",
    "save_velocity_csv",
    "capped_bump_parameter",
    "AdvectionDiffusionModel",
]

#: Relative residual allowed per implicit-Euler step.
STEP_RTOL = 1e-10


class RecirculatingVelocity:
    """Divergence-free cellular flow derived from the streamfunction
    ``psi = sin(pi x) sin(pi y)``, scaled so the maximum speed equals
    ``amplitude``:

        v = amplitude * ( sin(pi x) cos(pi y), -cos(pi x) sin(pi y) ).

    The normal component vanishes identically on the boundary of the square.
    """

    def __init__(self, amplitude: float = 1.0):
        if amplitude <= 0:
            raise ValidationError("velocity amplitude must be positive")
        self.amplitude = float(amplitude)

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        px = np.pi * pts[:, 0]
        py = np.pi * pts[:, 1]
        vx = self.amplitude * np.sin(px) * np.cos(py)
        vy = -self.amplitude * np.cos(px) * np.sin(py)
        return np.column_stack([vx, vy])

    def divergence(self, points) -> np.ndarray:
        """Pointwise divergence from the closed-form derivatives.

        Both terms equal ``±amplitude*pi*cos(pi x)cos(pi y)``, so their sum
        cancels exactly in floating point.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        term = self.amplitude * np.pi * np.cos(np.pi * pts[:, 0]) * np.cos(np.pi * pts[:, 1])
        return term - term


def save_velocity_csv(path, velocity_nodal) -> None:
    """Write nodal velocities as CSV rows ``vertex,vx,vy``."""
    vel = np.asarray(velocity_nodal, dtype=float)
    with open(path, "w") as fh:
        fh.write("vertex,vx,vy\n")
        for i, (vx, vy) in enumerate(vel):
            fh.write(f"{i},{float(vx)!r},{float(vy)!r}\n")


def load_velocity_csv(path, grid: fem.Grid2D) -> np.ndarray:
    """Read nodal velocities from CSV rows ``vertex,vx,vy``."""
    raw = np.genfromtxt(path, delimiter=",", names=True)
    if raw.dtype.names is None or set(raw.dtype.names) != {"vertex", "vx", "vy"}:
        raise ValidationError(f"{path}: expected header 'vertex,vx,vy'")
    raw = np.atleast_1d(raw)
    order = np.argsort(raw["vertex"])
    vertices = raw["vertex"][order].astype(np.int64)
    if not np.array_equal(vertices, np.arange(grid.n_vertices)):
        raise ValidationError(
            f"{path}: velocity file must list every vertex of the grid exactly once"
        )
    return np.column_stack([raw["vx"][order], raw["vy"][order]])


def capped_bump_parameter(grid: fem.Grid2D, center=(0.35, 0.7), width=100.0, cap=0.5):
    """Capped Gaussian bump ``min(cap, exp(-width * ||x - center||^2))`` at
    the grid vertices; the stock synthetic truth for transport runs."""
    diff = grid.coords - np.asarray(center, dtype=float)
    return np.minimum(cap, np.exp(-width * np.sum(diff**2, axis=1)))


class _AdvectionLinearization(Linearization):
    """Derivative handle; the map is linear so it is parameter-independent."""

    def __init__(self, model: "AdvectionDiffusionModel", m):
        super().__init__(model, m)
        self._trajectory = None

    def predict(self, design=None) -> np.ndarray:
        if self._trajectory is None:
            self._trajectory = self.model.solve_forward(self.point)
        return self.model.observe(self._trajectory, design)

    def jacobian_action(self, dm) -> np.ndarray:
        model = self.model
        dm = model._check_parameter(dm)
        model.counters.incremental_forward += 1
        return model._march_observe(dm)

    def jacobian_transpose_action(self, z) -> np.ndarray:
        model = self.model
        z = np.asarray(z, dtype=float)
        if z.shape != (model.d,):
            raise ValidationError(f"adjoint input must have length {model.d}")
        model.counters.incremental_adjoint += 1

        bt = model.sensors.observation_matrix.T
        blocks = {t: z[i * model.n_locations : (i + 1) * model.n_locations]
                  for i, t in enumerate(model.observation_times)}
        w = np.zeros(model.n)
        start = max(model.observation_times)
        for step in range(start, 0, -1):
            if step in blocks:
                w = w + bt @ blocks[step]
            w = model.mass @ model._factor.solve(w, trans="T")
        if 0 in blocks:
            w = w + bt @ blocks[0]
        return w


class AdvectionDiffusionModel(ForwardModel):
    """Linear parameter-to-observable map for transported initial conditions.

    Parameters
    ----------
    grid : Grid2D
        Shared state and parameter mesh.
    sensors : SensorArray
        Candidate locations; ``sensors.observation_times`` selects the
        recorded time steps (final step by default).  Each (location, time)
        pair is one candidate observation row, with rows grouped per time
        step in ascending time order.
    diffusion : float
        Diffusivity ``kappa``.
    velocity : None, array, or callable
        ``None`` uses the unit-speed :class:`RecirculatingVelocity`; an array
        gives nodal values directly; a callable is evaluated at the vertices.
    n_steps, t_final : int, float
        Implicit-Euler step count and final time (``dt = t_final / n_steps``).
    """

    def __init__(self, grid, sensors: SensorArray, diffusion=1e-3,
                 velocity=None, n_steps=40, t_final=4.0):
        super().__init__()
        if diffusion <= 0:
            raise ValidationError("diffusion must be positive")
        if n_steps < 1 or t_final <= 0:
            raise ValidationError("need n_steps >= 1 and t_final > 0")
        self.grid = grid
        self.sensors = sensors
        self.diffusion = float(diffusion)
        self.n_steps = int(n_steps)
        self.dt = float(t_final) / self.n_steps
        self.t_final = float(t_final)

        if velocity is None:
            velocity = RecirculatingVelocity()
        self.velocity = velocity
        if callable(velocity):
            vel_nodal = np.asarray(velocity(grid.coords), dtype=float)
        else:
            vel_nodal = np.asarray(velocity, dtype=float)
        if vel_nodal.shape != (grid.n_vertices, 2):
            raise ValidationError("velocity must provide one 2-vector per vertex")
        self.velocity_nodal = vel_nodal

        times = sensors.observation_times
        if times is None:
            times = [self.n_steps]
        times = sorted(set(int(t) for t in times))
        if not times or times[0] < 0 or times[-1] > self.n_steps:
            raise ValidationError(
                f"observation times must be step indices in [0, {self.n_steps}]"
            )
        self.observation_times = times

        self.mass = fem.mass_matrix(grid)
        stiffness = fem.stiffness_matrix(grid)
        transport = fem.advection_matrix(grid, vel_nodal)
        system = self.mass + self.dt * (self.diffusion * stiffness + transport)
        # One factorization serves every forward, incremental and adjoint solve.
        self._factor = CheckedFactor(system.tocsr(), "implicit-Euler system", rtol=STEP_RTOL)

    @property
    def n(self) -> int:
        return self.grid.n_vertices

    @property
    def n_locations(self) -> int:
        return self.sensors.n_locations

    @property
    def d(self) -> int:
        return self.n_locations * len(self.observation_times)

    def solve_forward(self, m) -> np.ndarray:
        """Full trajectory, shape ``(n_steps + 1, n)``; row 0 is ``m``."""
        m = self._check_parameter(m)
        self.counters.forward_solves += 1
        states = np.empty((self.n_steps + 1, self.n))
        states[0] = m
        u = m
        for step in range(1, self.n_steps + 1):
            u = self._factor.solve(self.mass @ u)
            states[step] = u
        return states

    def observe(self, state, design=None) -> np.ndarray:
        states = np.asarray(state, dtype=float)
        if states.shape != (self.n_steps + 1, self.n):
            raise ValidationError("observe expects a full state trajectory")
        b = self.sensors.observation_matrix
        data = np.concatenate([b @ states[t] for t in self.observation_times])
        return self._restrict(data, design)

    def _march_observe(self, m0: np.ndarray) -> np.ndarray:
        """March ``m0`` forward, collecting observation rows at the recorded steps."""
        b = self.sensors.observation_matrix
        out = []
        if self.observation_times[0] == 0:
            out.append(b @ m0)
        u = m0
        last = max(self.observation_times)
        for step in range(1, last + 1):
            u = self._factor.solve(self.mass @ u)
            if step in self.observation_times:
                out.append(b @ u)
        return np.concatenate(out)

    def linearize(self, m) -> _AdvectionLinearization:
        m = self._check_parameter(m)
        self._lin = _AdvectionLinearization(self, m)
        return self._lin
