"""BFGS with a backtracking (Armijo) line search."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimOptions:
    """Optimizer settings shared by every sieve minimum distance solve.

    ``restarts`` random starts are drawn in addition to the zero vector,
    each a Gaussian with standard deviation ``init_scale``.
    """

    gtol: float = 1e-8
    max_iter: int = 500
    restarts: int = 3
    init_scale: float = 0.1
    seed: int = 0
    method: str = "auto"


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    message: str

    @property
    def grad_norm(self):
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def bfgs(fun_grad, x0, gtol=1e-8, max_iter=500, c1=1e-4, shrink=0.5, h0=None):
    """Minimize a smooth function given a callable returning ``(f, grad)``.

    Converged means ``max|grad| <= gtol * max(1, |f|)``. The inverse Hessian
    starts at the identity, is rescaled after the first accepted step and is
    reset whenever the search direction stops being a descent direction.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return OptimResult(x, f, g, 0, False, "non-finite objective at start")
    dim = x.size
    eye = np.eye(dim)
    H = eye.copy() if h0 is None else np.array(h0, dtype=float)
    fresh = h0 is None
    for it in range(max_iter):
        if np.max(np.abs(g), initial=0.0) <= gtol * max(1.0, abs(f)):
            return OptimResult(x, f, g, it, True, "gradient below tolerance")
        p = -H @ g
        slope = g @ p
        if slope >= 0:
            H = eye.copy()
            fresh = True
            p = -g
            slope = -(g @ g)
        step = 1.0
        while True:
            x_new = x + step * p
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
                break
            step *= shrink
            if step < 1e-20:
                break
        if step < 1e-20:
            if not fresh:
                # stale curvature; retry along steepest descent
                H = eye.copy()
                fresh = True
                continue
            converged = np.max(np.abs(g), initial=0.0) <= gtol * max(1.0, abs(f))
            return OptimResult(x, f, g, it, bool(converged), "line search failed")
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if fresh:
                H = eye * (sy / (y @ y))
                fresh = False
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
    converged = np.max(np.abs(g), initial=0.0) <= gtol * max(1.0, abs(f))
    return OptimResult(x, f, g, max_iter, bool(converged), "iteration limit")
