"""Weighted Levenberg-Marquardt used by the series and line-shape fits."""
from dataclasses import dataclass

import numpy as np

from .errors import IllConditioned, NoConvergence


@dataclass
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    chi2: float
    iterations: int
    condition: float

    @property
    def sigma(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def numeric_jacobian(fun, p, f0=None, rel_step=1e-7, scale=None):
    p = np.asarray(p, float)
    f0 = fun(p) if f0 is None else f0
    jac = np.empty((f0.size, p.size))
    scale = np.ones_like(p) if scale is None else scale
    for j in range(p.size):
        h = rel_step * max(abs(p[j]), scale[j])
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        jac[:, j] = (fun(up) - fun(dn)) / (2.0 * h)
    return jac


def levenberg_marquardt(residual_fn, p0, jac_fn=None, max_iter=500, tol=1e-12,
                        max_condition=1e12, scale=None, partial=False):
    """Minimise ``sum(residual_fn(p)**2)``.

    ``residual_fn`` must already include the 1/sigma weights. The damping
    starts at 1e-3, grows x10 on a rejected step and shrinks /10 on an
    accepted one. The condition number is that of the column-scaled normal
    matrix, so parameters of very different magnitude are not penalised.
    With ``partial`` the state after ``max_iter`` steps is returned without
    a covariance instead of raising (used to screen starting points).
    """
    p = np.array(p0, float)
    scale = np.ones_like(p) if scale is None else np.asarray(scale, float)
    if jac_fn is None:
        def jac_fn(q, f):
            return numeric_jacobian(residual_fn, q, f, scale=scale)
    r = residual_fn(p)
    cost = float(r @ r)
    lam = 1e-3
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        jac = jac_fn(p, r)
        norms = np.linalg.norm(jac, axis=0)
        if np.any(norms == 0) or not np.all(np.isfinite(jac)):
            raise IllConditioned("a parameter does not influence the residuals")
        js = jac / norms
        a = js.T @ js
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or cond > max_condition:
            raise IllConditioned(f"normal-equation condition number {cond:.3g}")
        g = js.T @ r
        improved = False
        while lam < 1e16:
            step = np.linalg.solve(a + lam * np.diag(np.diag(a)), -g) / norms
            trial = p + step
            rt = residual_fn(trial)
            ct = float(rt @ rt)
            if np.isfinite(ct) and ct <= cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            converged = True
            break
        small = np.all(np.abs(step) <= tol * (np.abs(p) + scale))
        drop = cost - ct
        p, r, cost = trial, rt, ct
        lam = max(lam / 10.0, 1e-12)
        if small or drop <= 1e-3 * tol * cost:
            converged = True
            break
    if not converged and partial:
        return FitResult(p, np.full((p.size, p.size), np.nan), r, cost, it, np.nan)
    if not converged:
        raise NoConvergence(f"no convergence after {max_iter} iterations")
    jac = jac_fn(p, r)
    norms = np.linalg.norm(jac, axis=0)
    js = jac / norms
    a = js.T @ js
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditioned(f"normal-equation condition number {cond:.3g}")
    cov = np.linalg.inv(a) / np.outer(norms, norms)
    return FitResult(p, cov, r, cost, it, cond)
