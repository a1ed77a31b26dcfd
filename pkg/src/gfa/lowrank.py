"""Low-rank model for the group-factor precisions.

``log alpha = U V^T + mu_u 1^T + 1 mu_v^T``. The bound as a function of
``(U, V, mu_u, mu_v)`` is

    sum_{m,k} D_m log alpha_mk - <W_m W_m^T>_kk alpha_mk - lam (|U|^2 + |V|^2)

which is twice the alpha-dependent part of the evidence lower bound. Log
entries are clamped to ``[-cap, cap]``; the gradient is zero where clamped.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .model import InnerOptSettings, LowRankAlpha, NumericalError

log = logging.getLogger(__name__)

LOG_CAP = math.log(1e12)


def _raw_log_alpha(u, v, mu_u, mu_v):
    return u @ v.T + mu_u[:, None] + mu_v[None, :]


def expected_alpha(u, v, mu_u, mu_v, cap: float = LOG_CAP) -> np.ndarray:
    return np.exp(np.clip(_raw_log_alpha(u, v, mu_u, mu_v), -cap, cap))


def alpha_objective(u, v, mu_u, mu_v, ww_diags, d, lam, cap: float = LOG_CAP) -> float:
    log_alpha = np.clip(_raw_log_alpha(u, v, mu_u, mu_v), -cap, cap)
    d = np.asarray(d, dtype=float)
    cell = d[:, None] * log_alpha - ww_diags * np.exp(log_alpha)
    if not np.all(np.isfinite(cell)):
        m, k = np.argwhere(~np.isfinite(cell))[0]
        raise NumericalError(f"non-finite alpha objective at (m={m}, k={k})")
    return float(cell.sum() - lam * (np.sum(u * u) + np.sum(v * v)))


def alpha_gradient(u, v, mu_u, mu_v, ww_diags, d, lam, cap: float = LOG_CAP):
    """Ascent direction of :func:`alpha_objective`.

    Returns ``(grad_u, grad_v, grad_mu_u, grad_mu_v)``.
    """
    raw = _raw_log_alpha(u, v, mu_u, mu_v)
    d = np.asarray(d, dtype=float)
    a = d[:, None] - ww_diags * np.exp(np.clip(raw, -cap, cap))
    a[np.abs(raw) > cap] = 0.0
    return a @ v - 2 * lam * u, a.T @ u - 2 * lam * v, a.sum(axis=1), a.sum(axis=0)


@dataclass
class InnerResult:
    alpha: LowRankAlpha
    n_iter: int
    objective_start: float
    objective_end: float
    trace: list = field(default_factory=list)
    warning: str = ""


def _pack(u, v, mu_u, mu_v):
    return np.concatenate([u.ravel(), v.ravel(), mu_u, mu_v])


def optimize_uv(alpha: LowRankAlpha, ww_diags, d, lam,
                settings: InnerOptSettings = InnerOptSettings()) -> InnerResult:
    """Maximize the alpha objective over ``(U, V, mu_u, mu_v)`` with L-BFGS.

    Never returns a point worse than the input.
    """
    m, r = alpha.u.shape
    k = alpha.v.shape[0]
    cap = alpha.log_cap
    ww_diags = np.asarray(ww_diags, dtype=float)

    def unpack(x):
        i = 0
        u = x[i:i + m * r].reshape(m, r); i += m * r
        v = x[i:i + k * r].reshape(k, r); i += k * r
        return u, v, x[i:i + m], x[i + m:]

    dcol = np.asarray(d, dtype=float)[:, None]

    def neg(x):
        u, v, mu_u, mu_v = unpack(x)
        raw = u @ v.T
        raw += mu_u[:, None]
        raw += mu_v
        log_alpha = np.clip(raw, -cap, cap)
        weighted = ww_diags * np.exp(log_alpha)
        f = float(np.sum(dcol * log_alpha - weighted)) - lam * float(x[:m * r + k * r] @ x[:m * r + k * r])
        if not np.isfinite(f):
            raise NumericalError("non-finite alpha objective")
        a = dcol - weighted
        clamped = log_alpha != raw
        if clamped.any():
            a[clamped] = 0.0
        grad = np.empty_like(x)
        grad[:m * r] = (a @ v - 2 * lam * u).ravel()
        grad[m * r:m * r + k * r] = (a.T @ u - 2 * lam * v).ravel()
        grad[m * r + k * r:m * r + k * r + m] = a.sum(axis=1)
        grad[m * r + k * r + m:] = a.sum(axis=0)
        return -f, -grad

    x0 = _pack(alpha.u, alpha.v, alpha.mu_u, alpha.mu_v)
    f0, g0 = neg(x0)
    tol = settings.grad_tol * max(1.0, abs(f0))
    result = InnerResult(alpha, 0, -f0, -f0, [-f0])
    if np.max(np.abs(g0)) < tol:
        return result

    best = {"x": x0, "f": f0}
    trace = result.trace

    def callback(intermediate_result):
        f = intermediate_result.fun
        trace.append(-f)
        if f < best["f"]:
            best.update(x=intermediate_result.x.copy(), f=f)

    opt = minimize(neg, x0, jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxcor": settings.memory, "maxiter": settings.max_iters,
                            "gtol": tol, "ftol": 1e-15, "maxls": 40})
    if opt.fun < best["f"]:
        best.update(x=opt.x, f=float(opt.fun))
    if not opt.success and "ITERATIONS" not in str(opt.message).upper():
        result.warning = str(opt.message)
        log.debug("L-BFGS stopped early: %s", opt.message)
    u, v, mu_u, mu_v = unpack(best["x"])
    result.alpha = LowRankAlpha(u.copy(), v.copy(), mu_u.copy(), mu_v.copy(), cap)
    result.n_iter = int(opt.nit)
    result.objective_end = -best["f"]
    return result


def closed_form_alpha(ww_diags, d) -> np.ndarray:
    """Unconstrained maximizer ``alpha_mk = D_m / <W_m W_m^T>_kk``."""
    d = np.asarray(d, dtype=float)
    return d[:, None] / np.asarray(ww_diags, dtype=float)
