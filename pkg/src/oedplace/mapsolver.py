"""Inexact Newton-CG maximizer of the posterior density.

Minimizes ``0.5 ||F_W(m) - y||^2_prec + 0.5 ||m - mean||^2_prior-precision``
with the Gauss-Newton Hessian, conjugate gradients preconditioned by the
prior covariance, an Eisenstat-Walker forcing term
``min(0.5, sqrt(|g|/|g0|))`` for the inner tolerance, and Armijo
backtracking on the objective.  Every CG iteration is exactly one
Gauss-Newton Hessian action, which is what the model's counters record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .criteria import _design_rows
from .errors import NumericalError, ValidationError

__all__ = ["NewtonSettings", "MapResult", "gauss_newton_hessian_action", "find_map"]


@dataclass(frozen=True)
class NewtonSettings:
    """Solver knobs; the defaults suit the desk-scale problems."""

    max_newton: int = 50
    grad_rtol: float = 1e-8
    cg_max: int = 200
    armijo_c: float = 1e-4
    max_backtracks: int = 20

    def __post_init__(self):
        if self.max_newton < 1 or self.cg_max < 1 or self.max_backtracks < 1:
            raise ValidationError("iteration limits must be positive")
        if not (0 < self.grad_rtol < 1) or not (0 < self.armijo_c < 1):
            raise ValidationError("grad_rtol and armijo_c must lie in (0, 1)")


@dataclass
class MapResult:
    parameter: np.ndarray
    converged: bool
    newton_iterations: int
    cg_iterations: int
    objective: float
    gradient_norm: float
    initial_gradient_norm: float
    trace: list = field(default_factory=list)


def gauss_newton_hessian_action(lin, prior, noise, design, dm) -> np.ndarray:
    """Action of ``J_W^T diag(1/sigma_W^2) J_W + prior precision`` on ``dm``.

    One incremental forward plus one incremental adjoint solve; increments the
    model's ``gauss_newton_actions`` counter.
    """
    rows = _design_rows(design, noise.d)
    lin.counters.gauss_newton_actions += 1
    dm = np.asarray(dm, dtype=float)
    predicted = lin.jacobian_action(dm)[rows]
    back = np.zeros(noise.d)
    back[rows] = predicted * noise.precision_diagonal[rows]
    return lin.jacobian_transpose_action(back) + prior.apply_precision(dm)


def _preconditioned_cg(apply_op, rhs, apply_precond, rel_tol, max_iter):
    """CG for an SPD operator; returns ``(x, iterations)``.

    Terminates on ``||residual|| <= rel_tol * ||rhs||`` in the Euclidean norm.
    """
    x = np.zeros_like(rhs)
    r = rhs.copy()
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return x, 0
    z = apply_precond(r)
    p = z.copy()
    rz = float(r @ z)
    iterations = 0
    while iterations < max_iter:
        hp = apply_op(p)
        curvature = float(p @ hp)
        iterations += 1
        if curvature <= 0.0:
            # The operator is SPD up to roundoff; salvage what we have.
            if not x.any():
                x = p.copy()
            break
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * hp
        if np.linalg.norm(r) <= rel_tol * rhs_norm:
            break
        z = apply_precond(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, iterations


def find_map(model, prior, noise, y, design=None, settings=None, m0=None) -> MapResult:
    """MAP point of the design-restricted inverse problem.

    ``y`` holds one datum per design row.  Starts from ``m0`` (prior mean by
    default).  The returned trace records objective, gradient norm, inner
    iteration count and step length per Newton step.
    """
    settings = settings or NewtonSettings()
    rows = _design_rows(design, noise.d) if design is not None else np.arange(noise.d)
    y = np.asarray(y, dtype=float)
    if y.shape != (rows.size,):
        raise ValidationError(f"data must have one entry per design row ({rows.size})")
    precision = noise.precision_diagonal[rows]

    m = np.array(prior.mean if m0 is None else m0, dtype=float)
    model.counters.map_solves += 1

    def objective(predicted, point):
        misfit = predicted - y
        return 0.5 * float(misfit @ (precision * misfit)) + 0.5 * prior.precision_norm_sq(
            point - prior.mean
        )

    def gradient(lin, point, predicted):
        back = np.zeros(noise.d)
        back[rows] = (predicted - y) * precision
        return lin.jacobian_transpose_action(back) + prior.apply_precision(
            point - prior.mean
        )

    lin = model.linearize(m)
    predicted = lin.predict(rows)
    current = objective(predicted, m)

    trace = []
    total_cg = 0
    g0_norm = None
    converged = False
    iteration = 0

    for iteration in range(settings.max_newton + 1):
        grad = gradient(lin, m, predicted)
        gnorm = float(np.linalg.norm(grad))
        if g0_norm is None:
            g0_norm = gnorm
        if gnorm <= settings.grad_rtol * g0_norm or g0_norm == 0.0:
            converged = True
            break
        if iteration == settings.max_newton:
            break

        forcing = min(0.5, math.sqrt(gnorm / g0_norm))
        direction, cg_iters = _preconditioned_cg(
            lambda v: gauss_newton_hessian_action(lin, prior, noise, rows, v),
            -grad,
            prior.apply_covariance,
            forcing,
            settings.cg_max,
        )
        total_cg += cg_iters

        slope = float(grad @ direction)
        if slope >= 0.0:  # not a descent direction; fall back to steepest descent
            direction = -grad
            slope = -gnorm**2

        step = 1.0
        accepted = False
        for _ in range(settings.max_backtracks):
            trial_m = m + step * direction
            try:
                trial_lin = model.linearize(trial_m)
                trial_predicted = trial_lin.predict(rows)
            except NumericalError:
                step *= 0.5  # e.g. conductivity overflow; shrink and retry
                continue
            trial_value = objective(trial_predicted, trial_m)
            if trial_value <= current + settings.armijo_c * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break

        m, lin, predicted, current = trial_m, trial_lin, trial_predicted, trial_value
        trace.append(
            {
                "iteration": iteration + 1,
                "objective": current,
                "gradient_norm": gnorm,
                "cg_iterations": cg_iters,
                "step": step,
            }
        )

    return MapResult(
        parameter=m,
        converged=converged,
        newton_iterations=len(trace),
        cg_iterations=total_cg,
        objective=current,
        gradient_norm=float(np.linalg.norm(gradient(lin, m, predicted))),
        initial_gradient_norm=g0_norm or 0.0,
        trace=trace,
    )
