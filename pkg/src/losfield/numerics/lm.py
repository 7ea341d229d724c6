"""Levenberg-Marquardt damped least squares."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Residual = Callable[[np.ndarray], np.ndarray]
Jacobian = Callable[[np.ndarray], np.ndarray]

_MAX_DAMPING = 1e16
_SPLIT = 134217729.0  # 2**27 + 1


def half_sum_squares(r: np.ndarray) -> float:
    """Correctly rounded ``0.5 * sum(r**2)``.

    Each square is split exactly into a rounded part and its error term
    (Veltkamp/Dekker), and the parts are summed with ``math.fsum``. Rounding
    is then monotone in the exact cost, so a genuine decrease never shows up
    as an increase near the optimum, where the decrease can be smaller than
    one ulp of the cost.
    """
    r = np.asarray(r, dtype=float).ravel()
    with np.errstate(over="ignore", invalid="ignore"):
        hi = r * r
        c = _SPLIT * r
        rh = c - (c - r)
        rl = r - rh
        lo = ((rh * rh - hi) + 2.0 * rh * rl) + rl * rl
    if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
        return 0.5 * float(hi.sum())
    return 0.5 * math.fsum(np.concatenate([hi, lo]))


@dataclass(frozen=True)
class LmOptions:
    max_iterations: int = 200
    residual_tolerance: float = 1e-10
    step_tolerance: float = 1e-10
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1

    def __post_init__(self):
        for name in ("max_iterations", "residual_tolerance", "step_tolerance", "initial_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.damping_up > 1 > self.damping_down > 0:
            raise ValueError("need damping_up > 1 > damping_down > 0")


@dataclass
class LmResult:
    params: np.ndarray
    cost: float
    """Half the sum of squared residuals at ``params``."""
    iterations: int
    converged: bool
    message: str
    cost_history: list = field(default_factory=list)


def finite_difference_jacobian(residual: Residual, p: np.ndarray, r0: np.ndarray | None = None) -> np.ndarray:
    """Central differences with step ``max(1e-6, 1e-6 * |p_j|)``."""
    p = np.asarray(p, dtype=float)
    if r0 is None:
        r0 = residual(p)
    jac = np.empty((len(r0), len(p)))
    for j in range(len(p)):
        h = max(1e-6, 1e-6 * abs(p[j]))
        up, down = p.copy(), p.copy()
        up[j] += h
        down[j] -= h
        jac[:, j] = (residual(up) - residual(down)) / (2 * h)
    return jac


def lm_solve(residual: Residual, init, jacobian: Jacobian | None = None,
             opts: LmOptions = LmOptions()) -> LmResult:
    """Minimize ``0.5 * ||residual(p)||**2`` starting from ``init``.

    Uses Marquardt scaling of the damping term. Singular damped systems and
    non-finite trial points are handled by raising the damping, so the
    returned cost is never above the initial cost.

    Stops when the residual norm drops below ``residual_tolerance``, the
    step is below ``step_tolerance`` relative to the parameter norm, or the
    iteration budget runs out.
    """
    p = np.array(init, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("initial parameters must be finite")
    r = np.asarray(residual(p), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residual is not finite at the initial parameters")
    if r.size < p.size:
        raise ValueError(f"need at least as many residuals ({r.size}) as parameters ({p.size})")
    cost = half_sum_squares(r)
    history = [cost]
    lam = opts.initial_damping

    def jac_at(q, rq):
        return np.asarray(jacobian(q), dtype=float) if jacobian is not None else finite_difference_jacobian(residual, q, rq)

    for it in range(opts.max_iterations):
        if np.sqrt(2 * cost) <= opts.residual_tolerance:
            return LmResult(p, cost, it, True, "residual below tolerance", history)
        J = jac_at(p, r)
        g = J.T @ r
        if not np.any(g):
            return LmResult(p, cost, it, True, "zero gradient", history)
        A = J.T @ J
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                trial = p + step
                with np.errstate(over="ignore", invalid="ignore"):
                    r_trial = np.asarray(residual(trial), dtype=float)
                if np.all(np.isfinite(r_trial)):
                    # the change is formed from residual differences so it stays
                    # resolvable when both costs are large and nearly equal
                    with np.errstate(over="ignore", invalid="ignore"):
                        change = 0.5 * float((r_trial - r) @ (r_trial + r))
                    cost_trial = half_sum_squares(r_trial)
                    if change < 0 and cost_trial <= cost:
                        break
            lam *= opts.damping_up
            if lam > _MAX_DAMPING:
                return LmResult(p, cost, it, False, "damping limit reached", history)
        small_step = np.linalg.norm(step) <= opts.step_tolerance * (np.linalg.norm(p) + opts.step_tolerance)
        p, r, cost = trial, r_trial, cost_trial
        history.append(cost)
        lam = max(lam * opts.damping_down, 1e-15)
        if small_step:
            return LmResult(p, cost, it + 1, True, "step below tolerance", history)
    return LmResult(p, cost, opts.max_iterations, False, "iteration limit reached", history)
