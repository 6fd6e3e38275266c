"""Dense Levenberg-Marquardt driver shared by the sliding-window odometry
solver and the global pose graph.

Damping is applied to the diagonal of the normal matrix (Marquardt scaling),
which makes the accepted step invariant to a uniform rescaling of residual
weights.  Steps are only ever accepted when they lower the cost, so the
sequence of accepted costs is non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from srpslam.errors import InsufficientConstraints, SolverDiverged


@dataclass
class LMOptions:
    max_iterations: int = 30
    rel_cost_tol: float = 1e-6
    step_tol: float = 1e-8
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    lambda_max: float = 1e10


@dataclass
class LMResult:
    x: object
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    reason: str
    cost_history: list = None  # initial cost followed by every accepted cost


def solve(
    x0: object,
    evaluate: Callable[[object], tuple[float, np.ndarray, np.ndarray]],
    retract: Callable[[object, np.ndarray], object],
    options: LMOptions | None = None,
) -> LMResult:
    """Minimize a nonlinear least-squares cost.

    ``evaluate(x)`` returns (cost, H, g) where H = ΣJᵀWJ and g = ΣJᵀWr over
    all (already robustified) residuals; ``retract(x, dx)`` applies a tangent
    step.  The problem dimension is ``len(g)``.
    """
    opts = options if options is not None else LMOptions()
    cost, h, g = evaluate(x0)
    if not np.isfinite(cost):
        raise SolverDiverged("initial cost is not finite")
    n = g.shape[0]
    if h.shape != (n, n):
        raise InsufficientConstraints("normal matrix does not match gradient size")

    x = x0
    initial_cost = cost
    history = [cost]
    lam = opts.lambda_init
    reason = "max_iterations"
    converged = False
    it = 0
    while it < opts.max_iterations:
        it += 1
        diag = np.diag(h).copy()
        floor = 1e-12 * max(diag.max(), 1e-32)
        diag = np.maximum(diag, floor)
        stepped = False
        while lam <= opts.lambda_max:
            damped = h + np.diag(lam * diag)
            try:
                dx = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                lam *= opts.lambda_up
                continue
            if not np.all(np.isfinite(dx)):
                lam *= opts.lambda_up
                continue
            if np.linalg.norm(dx) < opts.step_tol:
                reason = "step_tol"
                converged = True
                stepped = False
                break
            x_new = retract(x, dx)
            new_cost, new_h, new_g = evaluate(x_new)
            if np.isfinite(new_cost) and new_cost < cost:
                rel_drop = (cost - new_cost) / max(cost, 1e-32)
                x, cost, h, g = x_new, new_cost, new_h, new_g
                history.append(cost)
                lam = max(lam * opts.lambda_down, 1e-12)
                stepped = True
                if rel_drop < opts.rel_cost_tol:
                    reason = "rel_cost_tol"
                    converged = True
                break
            lam *= opts.lambda_up
        if not stepped:
            if not converged:
                reason = "lambda_max" if lam > opts.lambda_max else reason
                converged = reason in ("step_tol",)
            break
        if converged:
            break
    else:
        reason = "max_iterations"
    if not np.isfinite(cost):
        raise SolverDiverged("cost diverged during optimization")
    return LMResult(
        x=x,
        cost=cost,
        initial_cost=initial_cost,
        iterations=it,
        converged=converged or reason in ("rel_cost_tol", "step_tol"),
        reason=reason,
        cost_history=history,
    )


def huber_weights(r: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """IRLS weights and robust cost terms for scalar residuals.

    Returns (w, rho) with w = min(1, delta/|r|) and rho the Huber cost
    (r² inside the delta band, linear growth outside).
    """
    a = np.abs(r)
    w = np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))
    rho = np.where(a <= delta, r * r, delta * (2.0 * a - delta))
    return w, rho


__all__ = ["LMOptions", "LMResult", "huber_weights", "solve"]
