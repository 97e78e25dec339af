"""Shared forward-model machinery: observation operators, noise, counters.

A :class:`ForwardModel` maps a nodal parameter to observations at candidate
sensor rows.  Derivative information is exposed through an immutable
:class:`Linearization` handle created by :meth:`ForwardModel.linearize`;
handles cache whatever factorizations the model needs, are read-only, and may
be used concurrently.  The model itself also offers ``jacobian_action``-style
convenience methods that require a prior :meth:`linearize` call at the same
point (a :class:`~oedplace.errors.StateError` is raised otherwise).

Every derivative-bearing operation increments the model's
:class:`ActionCounter`, which is what the offline/online cost accounting in
the pipeline reports and what the complexity tests assert on.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

from ..errors import StateError, ValidationError

__all__ = [
    "ActionCounter",
    "SensorArray",
    "NoiseModel",
    "Linearization",
    "ForwardModel",
    "misfit_gradient",
]


@dataclass
class ActionCounter:
    """Tally of the expensive operations a model has performed."""

    forward_solves: int = 0
    incremental_forward: int = 0
    incremental_adjoint: int = 0
    data_hessian_actions: int = 0
    gauss_newton_actions: int = 0
    map_solves: int = 0

    def as_dict(self) -> dict:
        return {
            "forward_solves": self.forward_solves,
            "incremental_forward": self.incremental_forward,
            "incremental_adjoint": self.incremental_adjoint,
            "data_hessian_actions": self.data_hessian_actions,
            "gauss_newton_actions": self.gauss_newton_actions,
            "map_solves": self.map_solves,
        }

    def snapshot(self) -> "ActionCounter":
        return ActionCounter(**self.as_dict())


class SensorArray:
    """Candidate sensor locations and their point-evaluation operator.

    Parameters
    ----------
    grid : Grid2D
        State mesh the sensors observe.
    locations : array-like, shape (m, 2)
        Points in the closed unit square; duplicates are rejected.
    observation_times : sequence of int, optional
        Time-step indices at which time-dependent models record data
        (ignored by steady models).  Defaults to the final step.
    """

    def __init__(self, grid, locations, observation_times=None):
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        if locations.ndim != 2 or locations.shape[1] != 2:
            raise ValidationError("sensor locations must have shape (m, 2)")
        if len(locations) == 0:
            raise ValidationError("at least one sensor location is required")
        rounded = np.round(locations / 1e-12) * 1e-12
        if len(np.unique(rounded, axis=0)) != len(locations):
            raise ValidationError("duplicate sensor locations")
        self.grid = grid
        self.locations = locations
        self.observation_matrix = grid.interpolation_matrix(locations)
        self.observation_times = (
            None if observation_times is None else [int(t) for t in observation_times]
        )

    @property
    def n_locations(self) -> int:
        return self.locations.shape[0]

    @classmethod
    def lattice(cls, grid, gx, gy=None, observation_times=None) -> "SensorArray":
        """Interior lattice of ``gx * gy`` candidates at
        ``((i+1)/(gx+1), (j+1)/(gy+1))``, ordered row by row."""
        if gy is None:
            gy = gx
        if gx < 1 or gy < 1:
            raise ValidationError("lattice needs at least one point per direction")
        x = np.arange(1, gx + 1) / (gx + 1.0)
        y = np.arange(1, gy + 1) / (gy + 1.0)
        xx, yy = np.meshgrid(x, y)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return cls(grid, pts, observation_times=observation_times)


class NoiseModel:
    """Independent Gaussian observation noise with per-row standard deviation."""

    def __init__(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 0:
            raise ValidationError("sigma must be a vector (one entry per candidate row)")
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise ValidationError("noise standard deviations must be positive and finite")
        self.sigma = sigma

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    @property
    def precision_diagonal(self) -> np.ndarray:
        return 1.0 / self.sigma**2

    def whiten(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) / self.sigma

    def sample(self, rng, size=None) -> np.ndarray:
        shape = (self.d,) if size is None else (size, self.d)
        return rng.standard_normal(shape) * self.sigma

    @classmethod
    def relative_to_signal(cls, data, rel=0.01) -> "NoiseModel":
        """Constant sigma equal to ``rel`` times the largest absolute datum."""
        data = np.asarray(data, dtype=float)
        scale = np.abs(data).max()
        if scale == 0.0:
            raise ValidationError("cannot scale noise to an identically zero signal")
        return cls(np.full(data.shape[-1] if data.ndim else data.size, rel * scale))


class Linearization(abc.ABC):
    """Forward model frozen at a parameter point.

    Instances are immutable and thread-safe; they hold the factorizations the
    derivative actions need and share the owning model's action counter.
    """

    def __init__(self, model: "ForwardModel", m: np.ndarray):
        self.model = model
        self.point = np.array(m, dtype=float, copy=True)
        self.point.setflags(write=False)

    @property
    def counters(self) -> ActionCounter:
        return self.model.counters

    def matches(self, m) -> bool:
        return np.array_equal(self.point, np.asarray(m, dtype=float))

    @abc.abstractmethod
    def predict(self, design=None) -> np.ndarray:
        """Observations of the forward state at the linearization point."""

    @abc.abstractmethod
    def jacobian_action(self, dm) -> np.ndarray:
        """Directional derivative of the observations, a full candidate vector."""

    @abc.abstractmethod
    def jacobian_transpose_action(self, z) -> np.ndarray:
        """Adjoint derivative action mapping a candidate vector to parameter space."""


class ForwardModel(abc.ABC):
    """Base class: parameter of length ``n`` to observations at ``d`` rows."""

    def __init__(self):
        self.counters = ActionCounter()
        self._lin: Linearization | None = None

    @property
    @abc.abstractmethod
    def n(self) -> int:
        """Parameter dimension."""

    @property
    @abc.abstractmethod
    def d(self) -> int:
        """Number of candidate observation rows."""

    @abc.abstractmethod
    def solve_forward(self, m) -> np.ndarray:
        """State (or state trajectory) for parameter ``m``."""

    @abc.abstractmethod
    def observe(self, state, design=None) -> np.ndarray:
        """Observation rows extracted from a forward state."""

    @abc.abstractmethod
    def linearize(self, m) -> Linearization:
        """Freeze the model at ``m`` and return the derivative handle."""

    # -- conveniences -------------------------------------------------------

    def _check_parameter(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if m.shape != (self.n,):
            raise ValidationError(f"parameter must have length {self.n}")
        return m

    def _restrict(self, values: np.ndarray, design) -> np.ndarray:
        if design is None:
            return values
        idx = np.asarray(
            design.indices if hasattr(design, "indices") else design, dtype=np.int64
        )
        if idx.size and (idx.min() < 0 or idx.max() >= self.d):
            raise ValidationError("design index outside the candidate range")
        return values[idx]

    def predict(self, m, design=None) -> np.ndarray:
        """Forward solve followed by observation."""
        return self.observe(self.solve_forward(m), design)

    def _require_linearization(self, m) -> Linearization:
        if self._lin is None:
            raise StateError("call linearize(m) before requesting derivative actions")
        if not self._lin.matches(m):
            raise StateError("model is linearized at a different point; call linearize(m)")
        return self._lin

    def jacobian_action(self, m, dm) -> np.ndarray:
        return self._require_linearization(m).jacobian_action(dm)

    def jacobian_transpose_action(self, m, z) -> np.ndarray:
        return self._require_linearization(m).jacobian_transpose_action(z)


def misfit_gradient(model, prior, noise, m, y, design=None) -> np.ndarray:
    """Gradient of the regularized data misfit at ``m``.

    The objective is ``0.5 ||F_W(m) - y||^2`` in the noise precision norm of
    the design rows plus ``0.5`` times the squared prior-precision norm of
    ``m - mean``; the returned gradient costs one forward and one adjoint
    solve.  ``y`` must hold one datum per design row (all rows when ``design``
    is ``None``).
    """
    m = np.asarray(m, dtype=float)
    lin = model.linearize(m)
    predicted = lin.predict(design)
    y = np.asarray(y, dtype=float)
    if y.shape != predicted.shape:
        raise ValidationError(
            f"data length {y.shape} does not match the design ({predicted.shape})"
        )
    residual = predicted - y
    idx = (
        np.arange(model.d)
        if design is None
        else np.asarray(design.indices if hasattr(design, "indices") else design)
    )
    weighted = np.zeros(model.d)
    weighted[idx] = residual * noise.precision_diagonal[idx]
    grad = lin.jacobian_transpose_action(weighted)
    return grad + prior.apply_precision(m - prior.mean)
