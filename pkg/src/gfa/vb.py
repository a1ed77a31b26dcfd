"""Mean-field variational inference for group factor analysis.

Each update maximizes the evidence lower bound with respect to one factor
of the posterior while holding the others fixed, so the bound never
decreases. One sweep runs: prune, W, Z, alpha, tau.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import lapack
from scipy.special import digamma, gammaln

from .lowrank import optimize_uv
from .model import (
    FittedModel,
    FullRankAlpha,
    GroupedDataset,
    Hyperparameters,
    LowRankAlpha,
    NumericalError,
    PosteriorState,
    center_columns,
    group_offsets,
    scale_columns,
    spd_logdet,
)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class MomentCache:
    ww_second_moment: np.ndarray  # M x K x K
    zz_second_moment: np.ndarray  # K x K
    tau_mean: np.ndarray


def spd_inverse(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse and log-determinant of an SPD matrix, or a stack of them, via Cholesky."""
    stack = p.reshape((-1,) + p.shape[-2:])
    sym = 0.5 * (stack + np.swapaxes(stack, -1, -2))
    inv = np.empty_like(sym)
    diag = np.empty(sym.shape[:2])
    for i in range(len(sym)):
        chol, info = lapack.dpotrf(sym[i], lower=1, clean=0, overwrite_a=1)
        if info != 0:
            raise NumericalError("precision matrix is not positive definite")
        diag[i] = chol.diagonal()
        inv[i], info = lapack.dpotri(chol, lower=1, overwrite_c=1)
        if info != 0:
            raise NumericalError("precision matrix inversion failed")
    # dpotri fills only the lower triangle
    lower = np.tri(p.shape[-1], dtype=bool)
    inv = np.where(lower, inv, np.swapaxes(inv, -1, -2))
    return inv.reshape(p.shape), 2 * np.log(diag).sum(axis=1).reshape(p.shape[:-2])


def ww_moments(state: PosteriorState) -> np.ndarray:
    """``<W_m W_m^T>`` per group as an ``M x K x K`` stack."""
    return state.ww


def zz_moment(state: PosteriorState) -> np.ndarray:
    return state.z_mean.T @ state.z_mean + state.z_mean.shape[0] * state.z_cov


def moments(state: PosteriorState) -> MomentCache:
    return MomentCache(ww_moments(state), zz_moment(state), state.tau_mean)


def _evolve(state: PosteriorState, **changes) -> PosteriorState:
    """``dataclasses.replace`` that keeps cached W moments when W is untouched."""
    new = replace(state, **changes)
    if "w_mean" not in changes and "w_cov" not in changes:
        for key in ("ww", "w_cov_logdet"):
            if key in state.__dict__:
                new.__dict__[key] = state.__dict__[key]
    return new


def init_state(dataset: GroupedDataset, h: Hyperparameters, seed: int) -> PosteriorState:
    n, d = dataset.data.shape
    m = dataset.n_groups
    k = h.k_init
    dims = np.asarray(dataset.group_dims, dtype=float)
    rng = np.random.default_rng(seed)
    z_mean = rng.standard_normal((n, k))
    w_mean = rng.standard_normal((d, k)) / math.sqrt(k)
    tau_a = h.tau_shape + dims * n / 2
    if h.is_full_rank(m):
        a = np.repeat((h.alpha_shape + dims / 2)[:, None], k, axis=1)
        alpha = FullRankAlpha(a, a.copy())
    else:
        r = h.rank
        scale = 1 / math.sqrt(r) if r else 1.0
        alpha = LowRankAlpha(rng.standard_normal((m, r)) * scale,
                             rng.standard_normal((k, r)) * scale,
                             np.zeros(m), np.zeros(k), h.log_alpha_cap)
    return PosteriorState(
        z_mean=z_mean,
        z_cov=np.eye(k),
        w_mean=w_mean,
        w_cov=np.repeat(np.eye(k)[None] / k, m, axis=0),
        tau_a=tau_a,
        tau_b=tau_a.copy(),
        alpha=alpha,
        group_dims=dataset.group_dims,
    )


def update_z(state: PosteriorState, dataset: GroupedDataset) -> PosteriorState:
    tau = state.tau_mean
    prec = np.eye(state.active_k) + np.tensordot(tau, ww_moments(state), axes=1)
    z_cov, _ = spd_inverse(prec)
    tau_cols = np.repeat(tau, state.group_dims)
    z_mean = dataset.data @ (state.w_mean * tau_cols[:, None]) @ z_cov
    return _evolve(state, z_mean=z_mean, z_cov=z_cov)


def update_w(state: PosteriorState, dataset: GroupedDataset) -> PosteriorState:
    tau = state.tau_mean
    alpha = state.expected_alpha
    zz = zz_moment(state)
    m = state.n_groups
    k = state.active_k
    prec = tau[:, None, None] * zz
    prec.reshape(m, k * k)[:, ::k + 1] += alpha
    w_cov, logdet_prec = spd_inverse(prec)
    xtz = dataset.data.T @ state.z_mean
    dims = state.group_dims
    if len(set(dims)) == 1:
        blocks = xtz.reshape(m, dims[0], -1) @ (tau[:, None, None] * w_cov)
        w_mean = blocks.reshape(xtz.shape)
    else:
        w_mean = np.empty_like(xtz)
        for g, start in enumerate(group_offsets(dims)):
            sl = slice(start, start + dims[g])
            w_mean[sl] = tau[g] * (xtz[sl] @ w_cov[g])
    assert w_cov.shape[0] == m
    new = replace(state, w_mean=w_mean, w_cov=w_cov)
    new.__dict__["w_cov_logdet"] = -logdet_prec
    return new


def expected_residuals(state: PosteriorState, dataset: GroupedDataset,
                       ww: Optional[np.ndarray] = None) -> np.ndarray:
    """``sum_i <|x_i^(m) - W_m^T z_i|^2>`` for every group."""
    if ww is None:
        ww = ww_moments(state)
    zz = zz_moment(state)
    offsets = group_offsets(state.group_dims)
    x = dataset.data
    sq = np.add.reduceat((x * x).sum(axis=0), offsets)
    cross = np.add.reduceat(((x.T @ state.z_mean) * state.w_mean).sum(axis=1), offsets)
    quad = np.einsum("mkl,kl->m", ww, zz)
    res = sq - 2 * cross + quad
    floor = -1e-8 * np.maximum(sq + quad, 1.0)
    if np.any(res < floor):
        g = int(np.argmin(res - floor))
        raise NumericalError(f"negative expected residual {res[g]:.3g} in group {g}")
    return np.maximum(res, 0.0)


def update_tau(state: PosteriorState, dataset: GroupedDataset, h: Hyperparameters) -> PosteriorState:
    n = dataset.n_samples
    dims = np.asarray(state.group_dims, dtype=float)
    tau_a = h.tau_shape + dims * n / 2
    res = expected_residuals(state, dataset)
    tau_b = h.tau_rate + 0.5 * res
    new = _evolve(state, tau_a=tau_a, tau_b=tau_b)
    # tau does not enter the residuals, so the bound can reuse them
    new.__dict__["_residuals"] = (dataset.data, res)
    return new


def update_alpha_fullrank(state: PosteriorState, h: Hyperparameters) -> PosteriorState:
    if not isinstance(state.alpha, FullRankAlpha):
        raise TypeError("update_alpha_fullrank needs the full-rank alpha variant")
    dims = np.asarray(state.group_dims, dtype=float)
    diag = np.diagonal(ww_moments(state), axis1=1, axis2=2)
    a = np.repeat((h.alpha_shape + dims / 2)[:, None], state.active_k, axis=1)
    b = h.alpha_rate + diag / 2
    return _evolve(state, alpha=FullRankAlpha(a, b))


def update_alpha_lowrank(state: PosteriorState, h: Hyperparameters) -> PosteriorState:
    if not isinstance(state.alpha, LowRankAlpha):
        raise TypeError("update_alpha_lowrank needs the low-rank alpha variant")
    diag = np.diagonal(ww_moments(state), axis1=1, axis2=2)
    res = optimize_uv(state.alpha, diag, state.group_dims, h.lam, h.inner_opt)
    if res.warning:
        log.debug("alpha optimizer: %s", res.warning)
    return _evolve(state, alpha=res.alpha)


def update_alpha(state: PosteriorState, h: Hyperparameters) -> PosteriorState:
    if isinstance(state.alpha, FullRankAlpha):
        return update_alpha_fullrank(state, h)
    return update_alpha_lowrank(state, h)


def factor_activity(state: PosteriorState) -> np.ndarray:
    """``c_k = sum_i <z_ik>^2 / N``."""
    return np.mean(state.z_mean ** 2, axis=0)


def prune_factors(state: PosteriorState, h: Hyperparameters) -> PosteriorState:
    c = factor_activity(state)
    keep = c >= h.prune_threshold
    if keep.all():
        return state
    if not keep.any():
        keep[np.argmax(c)] = True
    idx = np.flatnonzero(keep)
    return replace(
        state,
        z_mean=state.z_mean[:, idx],
        z_cov=state.z_cov[np.ix_(idx, idx)],
        w_mean=state.w_mean[:, idx],
        w_cov=state.w_cov[:, idx][:, :, idx],
        alpha=state.alpha.keep(idx),
    )


def _gamma_kl_terms(a, b, a0, b0):
    """``E_q[log p] - E_q[log q]`` for gamma prior (a0, b0) and posterior (a, b)."""
    elog = digamma(a) - np.log(b)
    mean = a / b
    lp = a0 * math.log(b0) - gammaln(a0) + (a0 - 1) * elog - b0 * mean
    lq = a * np.log(b) - gammaln(a) + (a - 1) * elog - a
    return lp - lq


def bound_terms(state: PosteriorState, dataset: GroupedDataset, h: Hyperparameters) -> dict:
    """Per-term breakdown of the evidence lower bound."""
    n = dataset.n_samples
    k = state.active_k
    dims = np.asarray(state.group_dims, dtype=float)
    ww = ww_moments(state)
    zz = zz_moment(state)
    tau_mean = state.tau_mean
    elog_tau = digamma(state.tau_a) - np.log(state.tau_b)
    cached = state.__dict__.get("_residuals")
    if cached is not None and cached[0] is dataset.data:
        res = cached[1]
    else:
        res = expected_residuals(state, dataset, ww)

    terms = {}
    terms["likelihood"] = float(np.sum(
        -0.5 * n * dims * LOG_2PI + 0.5 * n * dims * elog_tau - 0.5 * tau_mean * res))

    logdet_z = spd_logdet(state.z_cov)
    terms["z"] = float(-0.5 * np.trace(zz) + 0.5 * n * logdet_z + 0.5 * n * k)

    logdet_w = state.w_cov_logdet
    alpha = state.expected_alpha
    elog_alpha = state.alpha.expected_log_alpha
    ww_diag = np.diagonal(ww, axis1=1, axis2=2)
    terms["w"] = float(np.sum(0.5 * dims * k + 0.5 * dims * logdet_w)
                       + np.sum(0.5 * dims[:, None] * elog_alpha - 0.5 * alpha * ww_diag))

    terms["tau"] = float(np.sum(_gamma_kl_terms(state.tau_a, state.tau_b, h.tau_shape, h.tau_rate)))

    if isinstance(state.alpha, FullRankAlpha):
        terms["alpha"] = float(np.sum(_gamma_kl_terms(
            state.alpha.a_alpha, state.alpha.b_alpha, h.alpha_shape, h.alpha_rate)))
    else:
        a = state.alpha
        terms["alpha"] = float(-0.5 * h.lam * (np.sum(a.u ** 2) + np.sum(a.v ** 2)))
    return terms


def lower_bound(state: PosteriorState, dataset: GroupedDataset, h: Hyperparameters) -> float:
    terms = bound_terms(state, dataset, h)
    for name, value in terms.items():
        if not math.isfinite(value):
            raise NumericalError(f"lower bound term {name!r} is {value}")
    return math.fsum(terms.values())


def vb_sweep(state: PosteriorState, dataset: GroupedDataset, h: Hyperparameters) -> PosteriorState:
    state = prune_factors(state, h)
    state = update_w(state, dataset)
    state = update_z(state, dataset)
    state = update_alpha(state, h)
    return update_tau(state, dataset, h)


def prepare(dataset: GroupedDataset, scale: bool = False):
    centered, means = center_columns(dataset)
    scales = None
    if scale:
        centered, scales = scale_columns(centered)
    return centered, means, scales


def fit(dataset: GroupedDataset, h: Hyperparameters, seed: int = 0, scale: bool = False,
        callback: Optional[Callable[[int, PosteriorState, float], None]] = None) -> FittedModel:
    """Run coordinate ascent until the relative bound change drops below ``h.elbo_rel_tol``."""
    h.validate(dataset.n_groups)
    data, means, scales = prepare(dataset, scale)
    state = init_state(data, h, seed)
    trace: list[float] = []
    converged = False
    for it in range(h.max_iters):
        state = vb_sweep(state, data, h)
        bound = lower_bound(state, data, h)
        if callback is not None:
            callback(it, state, bound)
        if trace and bound < trace[-1] - 1e-8 * abs(trace[-1]):
            log.warning("bound decreased at iteration %d: %.10g -> %.10g", it, trace[-1], bound)
        trace.append(bound)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < h.elbo_rel_tol * abs(trace[-1]):
            converged = True
            break
    log.info("fit seed=%d: %d iterations, K=%d, bound=%.6f, converged=%s",
             seed, len(trace), state.active_k, trace[-1], converged)
    return FittedModel(state=state, column_means=means, hyper=h, elbo_trace=tuple(trace),
                       converged=converged, seed=seed, column_scales=scales,
                       group_names=dataset.group_names)
