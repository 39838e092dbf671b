"""Damped Gauss-Newton (Levenberg-Marquardt) least squares.

Plain dense implementation with numerical central-difference Jacobians by
default; callers with structured problems can pass their own Jacobian
callback.  Damping scales the normal-equation diagonal, so parameter blocks
with different units coexist without manual scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteResidual


@dataclass(frozen=True)
class LmOptions:
    max_iters: int = 100
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12


@dataclass
class LmResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool


def numerical_jacobian(fun, x: np.ndarray, step_scale: float = 1e-6) -> np.ndarray:
    """Central differences with per-parameter step max(1e-6, 1e-6*|x_i|)."""
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(fun(x), dtype=float)
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        h = max(step_scale, step_scale * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h)
    return jac


def _cost(r: np.ndarray) -> float:
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        return np.inf
    return float(r @ r)


def levenberg_marquardt(
    fun,
    x0: np.ndarray,
    options: LmOptions = LmOptions(),
    jacobian=None,
) -> LmResult:
    """Minimize ``sum(fun(x)**2)`` from ``x0``.

    The cost is non-increasing across accepted steps.  Non-convergence within
    ``max_iters`` is reported through ``converged`` on the result rather than
    raised, so callers can keep the best iterate; a non-finite residual at the
    starting point raises NonFiniteResidual.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidual("residual not finite at x0")
    cost = float(r @ r)
    if cost == 0.0:
        return LmResult(x, cost, 0, True)
    jac_fun = jacobian if jacobian is not None else (lambda xx: numerical_jacobian(fun, xx))

    lam = options.damping_init
    for itn in range(1, options.max_iters + 1):
        jac = np.asarray(jac_fun(x), dtype=float)
        g = jac.T @ r
        if np.max(np.abs(g)) < options.gradient_tol:
            return LmResult(x, cost, itn - 1, True)
        jtj = jac.T @ jac
        diag = np.clip(np.diag(jtj), 1e-12, None)

        accepted = False
        while lam < 1e14:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= options.damping_up
                continue
            if np.linalg.norm(delta) < options.step_tol * (np.linalg.norm(x) + options.step_tol):
                return LmResult(x, cost, itn, True)
            x_new = x + delta
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = _cost(r_new)
            if cost_new < cost:
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam * options.damping_down, 1e-15)
                accepted = True
                break
            lam *= options.damping_up
        if not accepted:
            # Damping exhausted: no descent direction left.
            return LmResult(x, cost, itn, False)
        if cost == 0.0:
            return LmResult(x, cost, itn, True)
    return LmResult(x, cost, options.max_iters, False)
