"""Quasi-Newton maximization: unconstrained BFGS and a lower-bounded variant.

Both routines maximize a smooth objective given an analytic gradient.
Internally the line search works on the negated objective, so the usual
strong-Wolfe conditions for minimization apply unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["OptOptions", "OptResult", "maximize", "maximize_box", "fd_newton_polish"]


@dataclass
class OptOptions:
    max_iter: int = 10_000
    grad_tol: float = 1e-8          # infinity norm of the (projected) gradient
    step_tol: float = 1e-10         # relative parameter change
    armijo: float = 1e-4            # sufficient-decrease constant
    curvature: float = 0.9          # strong-Wolfe curvature constant

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if min(self.grad_tol, self.step_tol, self.armijo, self.curvature) <= 0:
            raise ValueError("tolerances and line-search constants must be positive")


@dataclass
class OptResult:
    x: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    converged: bool
    active_lower: tuple[int, ...] = field(default_factory=tuple)


def _wolfe(phi, dphi, phi0, g0, c1, c2, amax=math.inf):
    """Strong-Wolfe step for minimization along a descent direction (g0 < 0).

    Returns (alpha, phi(alpha), ok).  ok is True when both Wolfe conditions
    hold, or when the feasible cap amax was reached while still descending
    with sufficient decrease.
    """
    a_prev, phi_prev, d_prev = 0.0, phi0, g0
    a = min(1.0, amax)
    for it in range(40):
        phi_a = phi(a)
        if (not math.isfinite(phi_a)) or phi_a > phi0 + c1 * a * g0 or (it > 0 and phi_a >= phi_prev):
            return _zoom(phi, dphi, a_prev, phi_prev, d_prev, a, phi_a, phi0, g0, c1, c2)
        d_a = dphi(a)
        if abs(d_a) <= -c2 * g0:
            return a, phi_a, True
        if d_a >= 0.0:
            return _zoom(phi, dphi, a, phi_a, d_a, a_prev, phi_prev, phi0, g0, c1, c2)
        if a >= amax * (1.0 - 1e-12):
            # Hit the feasible cap still descending; Armijo already holds.
            return a, phi_a, True
        a_prev, phi_prev, d_prev = a, phi_a, d_a
        a = min(2.0 * a, amax)
    return a_prev, phi_prev, a_prev > 0.0


def _zoom(phi, dphi, a_lo, phi_lo, d_lo, a_hi, phi_hi, phi0, g0, c1, c2):
    """Refine a bracketing interval until the strong-Wolfe conditions hold."""
    for _ in range(30):
        h = a_hi - a_lo
        if abs(h) <= 1e-16 * max(1.0, abs(a_lo)):
            break
        a = None
        if math.isfinite(phi_hi):
            # Minimizer of the quadratic through (a_lo, phi_lo, d_lo) and (a_hi, phi_hi);
            # exact for quadratic objectives.
            denom = phi_hi - phi_lo - d_lo * h
            if denom > 0.0:  # convex along the bracket
                cand = a_lo - 0.5 * d_lo * h * h / denom
                lo, hi = (a_lo, a_hi) if h > 0 else (a_hi, a_lo)
                margin = 0.05 * abs(h)
                if lo + margin <= cand <= hi - margin:
                    a = cand
        if a is None:
            a = a_lo + 0.5 * h
        phi_a = phi(a)
        if (not math.isfinite(phi_a)) or phi_a > phi0 + c1 * a * g0 or phi_a >= phi_lo:
            a_hi, phi_hi = a, phi_a
        else:
            d_a = dphi(a)
            if abs(d_a) <= -c2 * g0:
                return a, phi_a, True
            if d_a * (a_hi - a_lo) >= 0:
                a_hi, phi_hi = a_lo, phi_lo
            a_lo, phi_lo, d_lo = a, phi_a, d_a
    ok = a_lo > 0.0
    return a_lo, phi_lo, ok


def _bfgs_update(H, s, y):
    """Inverse-Hessian BFGS update (minimization convention, s'y > 0)."""
    sy = float(s @ y)
    Hy = H @ y
    yHy = float(y @ Hy)
    H += ((sy + yHy) / sy**2) * np.outer(s, s)
    H -= (np.outer(Hy, s) + np.outer(s, Hy)) / sy
    return H


def maximize(f, g, x0, opts: OptOptions | None = None, callback=None) -> OptResult:
    """Maximize a smooth function with BFGS.

    Parameters
    ----------
    f, g : callables returning the objective value and gradient.
    x0 : starting point; f and g must be finite there.
    opts : tolerances and iteration limits.
    callback : optional, called as ``callback(x, fx)`` after each accepted step.

    For a concave objective the returned point is the global maximum; in
    general it is a stationary point.  ``converged`` is set only when the
    gradient infinity-norm meets ``grad_tol``.
    """
    opts = opts or OptOptions()
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n = x.size
    fx = float(f(x))
    gx = np.atleast_1d(np.asarray(g(x), dtype=float))
    if not math.isfinite(fx) or not np.all(np.isfinite(gx)):
        raise ValueError("objective or gradient is not finite at the starting point")
    H = np.eye(n)
    iters = 0
    converged = _inf_norm(gx) <= opts.grad_tol
    while not converged and iters < opts.max_iter:
        d = H @ gx
        if float(d @ gx) <= 0.0:
            H = np.eye(n)
            d = gx.copy()
        cache: dict = {}

        def phi(a):
            return -float(f(x + a * d))

        def dphi(a):
            ga = np.atleast_1d(np.asarray(g(x + a * d), dtype=float))
            cache["grad"] = (a, ga)
            return -float(ga @ d)

        g0 = -float(gx @ d)
        a, phi_a, _ = _wolfe(phi, dphi, -fx, g0, opts.armijo, opts.curvature)
        if a <= 0.0:
            # Objective differences are at float-noise level; keep the full
            # quasi-Newton step if it still shrinks the gradient.
            a, phi_a, g_new = _noise_floor_step(f, g, x, d, fx, gx)
            if a <= 0.0:
                break
            x_new = x + a * d
            f_new = -phi_a
        else:
            x_new = x + a * d
            if "grad" in cache and cache["grad"][0] == a:
                g_new = cache["grad"][1]
            else:
                g_new = np.atleast_1d(np.asarray(g(x_new), dtype=float))
            f_new = -phi_a
        s = x_new - x
        y = gx - g_new  # gradient difference of the negated objective
        if float(s @ y) > 1e-12 * (np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            H = _bfgs_update(H, s, y)
        else:
            H = np.eye(n)  # curvature lost near machine precision
        rel_step = _inf_norm(s) / max(1.0, _inf_norm(x_new))
        x, fx, gx = x_new, f_new, g_new
        iters += 1
        if callback is not None:
            callback(x.copy(), fx)
        converged = np.all(np.isfinite(gx)) and _inf_norm(gx) <= opts.grad_tol
        if not converged and rel_step <= opts.step_tol:
            break
    return OptResult(
        x=x,
        f=fx,
        grad_norm=_inf_norm(gx),
        iterations=iters,
        converged=bool(converged),
        active_lower=(),
    )


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def fd_newton_polish(grad, x, lower=None, tol=1e-8, max_steps=8):
    """Newton refinement on a finite-difference Hessian of an analytic gradient.

    Line searches cannot measure objective changes once they fall below float
    noise, which can strand the gradient just above a tight tolerance; Newton
    steps need no objective comparisons.  Components at a finite lower bound
    with an outward gradient stay put and are excluded from the projected
    norm.  Returns (x, converged).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    n = x.size
    lo = (
        np.full(n, -math.inf)
        if lower is None
        else np.broadcast_to(np.asarray(lower, dtype=float), x.shape).copy()
    )
    bound_tol = 1e-12 * np.maximum(1.0, np.abs(np.where(np.isfinite(lo), lo, 0.0)))

    def projected(xv, gv):
        at_b = np.isfinite(lo) & (xv <= lo + bound_tol)
        return _inf_norm(np.where(at_b & (gv <= 0.0), 0.0, gv)), at_b

    g = np.atleast_1d(np.asarray(grad(x), dtype=float))
    norm, at_b = projected(x, g)
    for _ in range(max_steps):
        if norm <= tol:
            return x, True
        free = ~(at_b & (g <= 0.0))
        idx = np.flatnonzero(free)
        H = np.zeros((idx.size, idx.size))
        for col, i in enumerate(idx):
            h = max(1e-7, 1e-7 * abs(x[i]))
            down = x.copy()
            down[i] -= h
            up = x.copy()
            up[i] += h
            if np.isfinite(lo[i]) and down[i] < lo[i]:
                H[:, col] = (np.asarray(grad(up), dtype=float)[idx] - g[idx]) / h
            else:
                H[:, col] = (
                    np.asarray(grad(up), dtype=float)[idx]
                    - np.asarray(grad(down), dtype=float)[idx]
                ) / (2.0 * h)
        H = (H + H.T) / 2.0
        try:
            step = np.linalg.solve(H, -g[idx])
        except np.linalg.LinAlgError:
            break
        cand = x.copy()
        cand[idx] += step
        cand = np.maximum(cand, lo)
        g_new = np.atleast_1d(np.asarray(grad(cand), dtype=float))
        if not np.all(np.isfinite(g_new)):
            break
        norm_new, at_b_new = projected(cand, g_new)
        if norm_new >= norm:
            break
        x, g, norm, at_b = cand, g_new, norm_new, at_b_new
    return x, norm <= tol


def _noise_floor_step(f, g, x, d, fx, gx, amax=1.0):
    """Last-resort unit step for when the line search cannot measure progress.

    Near the optimum the objective change along d drops below float noise and
    Armijo comparisons become meaningless; the quasi-Newton step is then
    essentially a Newton step, so accept it when it reduces the gradient norm
    without measurably hurting the objective.
    """
    a = min(1.0, amax)
    x_try = x + a * d
    f_try = float(f(x_try))
    if not math.isfinite(f_try) or f_try < fx - 1e-10 * (abs(fx) + 1.0):
        return 0.0, -fx, gx
    g_try = np.atleast_1d(np.asarray(g(x_try), dtype=float))
    if not np.all(np.isfinite(g_try)) or _inf_norm(g_try) >= _inf_norm(gx):
        return 0.0, -fx, gx
    return a, -f_try, g_try


def maximize_box(f, g, x0, lower, opts: OptOptions | None = None, callback=None) -> OptResult:
    """Maximize subject to componentwise lower bounds.

    Gradient projection with BFGS updates on the free set; components may use
    ``-inf`` to stay unconstrained.  Convergence is declared on the projected
    gradient: components held at their bound with an outward-pointing gradient
    are excluded from the norm.
    """
    opts = opts or OptOptions()
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    lo = np.broadcast_to(np.asarray(lower, dtype=float), x.shape).copy()
    if np.any(x < lo):
        raise ValueError("infeasible starting point: need x0 >= lower")
    bound_tol = 1e-12 * np.maximum(1.0, np.abs(np.where(np.isfinite(lo), lo, 0.0)))

    def snap(v):
        hit = np.isfinite(lo) & (v - lo <= bound_tol)
        v[hit] = lo[hit]
        return v

    x = snap(x)
    fx = float(f(x))
    gx = np.atleast_1d(np.asarray(g(x), dtype=float))
    if not math.isfinite(fx) or not np.all(np.isfinite(gx)):
        raise ValueError("objective or gradient is not finite at the starting point")
    Hf = None
    prev_free = None
    iters = 0
    converged = False
    while iters < opts.max_iter:
        at_bound = np.isfinite(lo) & (x <= lo + bound_tol)
        active = at_bound & (gx <= 0.0)
        pg = np.where(active, 0.0, gx)
        if _inf_norm(pg) <= opts.grad_tol:
            converged = True
            break
        free = ~active
        key = free.tobytes()
        if key != prev_free:
            Hf = np.eye(int(free.sum()))
            prev_free = key
        gf = gx[free]
        df = Hf @ gf
        d = np.zeros_like(x)
        d[free] = df
        d[at_bound & (d < 0.0)] = 0.0  # never step into a wall
        if float(d @ gx) <= 0.0:
            Hf = np.eye(gf.size)
            d = np.zeros_like(x)
            d[free] = gf
            d[at_bound & (d < 0.0)] = 0.0
        moving_down = (d < 0.0) & np.isfinite(lo)
        amax = math.inf
        if np.any(moving_down):
            amax = float(np.min((lo[moving_down] - x[moving_down]) / d[moving_down]))
            amax = max(amax, 0.0)
        cache: dict = {}

        def phi(a):
            return -float(f(x + a * d))

        def dphi(a):
            ga = np.atleast_1d(np.asarray(g(x + a * d), dtype=float))
            cache["grad"] = (a, ga)
            return -float(ga @ d)

        g0 = -float(gx @ d)
        a, phi_a, _ = _wolfe(phi, dphi, -fx, g0, opts.armijo, opts.curvature, amax=amax)
        if a <= 0.0:
            a, phi_a, _ = _noise_floor_step(f, g, x, d, fx, gx, amax=amax)
            cache.pop("grad", None)
            if a <= 0.0:
                break
        x_new = snap(x + a * d)
        hit_wall = bool(np.any((x_new == lo) & (x > lo)))
        if hit_wall:
            f_new = float(f(x_new))
            g_new = np.atleast_1d(np.asarray(g(x_new), dtype=float))
        else:
            f_new = -phi_a
            if "grad" in cache and cache["grad"][0] == a:
                g_new = cache["grad"][1]
            else:
                g_new = np.atleast_1d(np.asarray(g(x_new), dtype=float))
        s = x_new - x
        if not hit_wall:
            sf = s[free]
            yf = (gx - g_new)[free]
            if float(sf @ yf) > 1e-12 * (np.linalg.norm(sf) * np.linalg.norm(yf) + 1e-300):
                Hf = _bfgs_update(Hf, sf, yf)
            else:
                Hf = np.eye(sf.size)
        rel_step = _inf_norm(s) / max(1.0, _inf_norm(x_new))
        x, fx, gx = x_new, f_new, g_new
        iters += 1
        if callback is not None:
            callback(x.copy(), fx)
        if rel_step <= opts.step_tol and not hit_wall:
            at_bound = np.isfinite(lo) & (x <= lo + bound_tol)
            pg = np.where(at_bound & (gx <= 0.0), 0.0, gx)
            converged = _inf_norm(pg) <= opts.grad_tol
            break
    at_bound = np.isfinite(lo) & (x <= lo + bound_tol)
    pg = np.where(at_bound & (gx <= 0.0), 0.0, gx)
    return OptResult(
        x=x,
        f=fx,
        grad_norm=_inf_norm(pg),
        iterations=iters,
        converged=bool(converged or _inf_norm(pg) <= opts.grad_tol),
        active_lower=tuple(int(i) for i in np.flatnonzero(at_bound)),
    )
