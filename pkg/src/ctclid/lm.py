"""Levenberg-Marquardt for small dense nonlinear least squares."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

__all__ = ["LMOptions", "LMResult", "InfeasibleStart", "levenberg_marquardt", "fd_jacobian"]


class InfeasibleStart(ValueError):
    """The starting point already has infinite cost."""


@dataclass(frozen=True)
class LMOptions:
    max_iterations: int = 200
    cost_tolerance: float = 1e-10
    step_tolerance: float = 1e-10
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.5
    fd_step: float = 1e-6
    max_damping: float = 1e16

    def __post_init__(self):
        for name in ("max_iterations", "cost_tolerance", "step_tolerance",
                     "initial_damping", "fd_step", "max_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.damping_up > 1 > self.damping_down > 0:
            raise ValueError("need damping_up > 1 > damping_down > 0")


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    accepted_steps: int
    evaluations: int
    termination: str
    trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.termination in ("cost_tolerance", "step_tolerance", "zero_residual", "no_improvement")


def _eval(fun, x):
    e = fun(x)
    if e is None:
        return None, np.inf
    e = np.asarray(e, dtype=float)
    cost = float(e @ e)
    if not np.isfinite(cost):
        return None, np.inf
    return e, cost


def fd_jacobian(fun, x, e0, rel_step=1e-6):
    """Forward-difference Jacobian with step ``rel_step * (1 + |x_i|)``.

    Falls back to a backward difference when the forward point is
    infeasible; columns where both fail are left at zero.
    Returns ``(J, evaluations)``.
    """
    J = np.zeros((e0.size, x.size))
    evals = 0
    for i in range(x.size):
        step = rel_step * (1.0 + abs(x[i]))
        for sign in (1.0, -1.0):
            xp = x.copy()
            xp[i] += sign * step
            ep, _ = _eval(fun, xp)
            evals += 1
            if ep is not None:
                J[:, i] = (ep - e0) / (sign * step)
                break
    return J, evals


def levenberg_marquardt(fun, x0, opts: LMOptions = LMOptions()) -> LMResult:
    """Minimize ``sum(fun(x)**2)``.

    ``fun`` returns the residual vector, or ``None`` (or anything with a
    non-finite sum of squares) where the model cannot be evaluated; such
    trial points count as rejected steps.  Steps solve
    ``(J'J + lam * diag(J'J)) dx = -J'e``.
    """
    x = np.array(x0, dtype=float)
    e, cost = _eval(fun, x)
    evals = 1
    if e is None:
        raise InfeasibleStart("residuals are not finite at the starting point; try other starts")
    initial_cost = cost
    trace = [cost]
    lam = opts.initial_damping
    accepted = 0
    termination = "max_iterations"
    it = 0
    while it < opts.max_iterations:
        if cost == 0.0:
            termination = "zero_residual"
            break
        it += 1
        J, n = fd_jacobian(fun, x, e, opts.fd_step)
        evals += n
        JtJ = J.T @ J
        g = J.T @ e
        d = np.diag(JtJ).copy()
        floor = 1e-12 * d.max() if d.max() > 0 else 1.0
        d = np.maximum(d, floor)
        while True:
            try:
                dx = np.linalg.solve(JtJ + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                dx = None
            if dx is not None and np.all(np.isfinite(dx)):
                x_new = x + dx
                e_new, cost_new = _eval(fun, x_new)
                evals += 1
            else:
                cost_new = np.inf
            if cost_new < cost:
                break
            lam *= opts.damping_up
            if lam > opts.max_damping:
                termination = "no_improvement"
                break
        if termination == "no_improvement":
            break
        accepted += 1
        rel_decrease = (cost - cost_new) / cost
        step_small = np.linalg.norm(dx) <= opts.step_tolerance * (1.0 + np.linalg.norm(x))
        x, e, cost = x_new, e_new, cost_new
        trace.append(cost)
        lam = max(lam * opts.damping_down, 1e-15)
        logger.debug("lm iter %d cost %.6e lambda %.1e", it, cost, lam)
        if rel_decrease < opts.cost_tolerance:
            termination = "cost_tolerance"
            break
        if step_small:
            termination = "step_tolerance"
            break
    return LMResult(x, cost, initial_cost, it, accepted, evals, termination, trace)
