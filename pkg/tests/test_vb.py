import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gfa.model import FullRankAlpha, LowRankAlpha, build_dataset, default_hyperparameters
from gfa.vb import (
    expected_residuals,
    fit,
    init_state,
    lower_bound,
    prepare,
    prune_factors,
    spd_inverse,
    update_alpha,
    update_tau,
    update_w,
    update_z,
    vb_sweep,
    _evolve,
)

from conftest import random_instance, warm


def test_spd_inverse_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 5, 5))
    p = a @ np.swapaxes(a, 1, 2) + np.eye(5)
    inv, logdet = spd_inverse(p)
    assert np.allclose(inv, np.linalg.inv(p))
    assert np.allclose(logdet, np.linalg.slogdet(p)[1])


def test_z_update_matches_dense_solve(small_problem):
    data, h, state = small_problem
    new = update_z(state, data)
    tau = state.tau_mean
    prec = np.eye(state.active_k)
    rhs = np.zeros((data.n_samples, state.active_k))
    for m in range(data.n_groups):
        w = state.w_group(m)
        ww = w.T @ w + data.group_dims[m] * state.w_cov[m]
        prec += tau[m] * ww
        rhs += tau[m] * data.group(m) @ w
    cov = np.linalg.inv(prec)
    assert np.allclose(new.z_cov, cov)
    assert np.allclose(new.z_mean, rhs @ cov)


def test_w_update_matches_dense_solve(small_problem):
    data, h, state = small_problem
    new = update_w(state, data)
    zz = state.z_mean.T @ state.z_mean + data.n_samples * state.z_cov
    alpha = state.expected_alpha
    for m in range(data.n_groups):
        tau = state.tau_mean[m]
        cov = np.linalg.inv(tau * zz + np.diag(alpha[m]))
        assert np.allclose(new.w_cov[m], cov)
        assert np.allclose(new.w_group(m), tau * data.group(m).T @ state.z_mean @ cov)


def test_expected_residual_monte_carlo(small_problem):
    data, h, state = small_problem
    rng = np.random.default_rng(1)
    draws = 20000
    n, k = state.z_mean.shape
    exact = expected_residuals(state, data)
    z_chol = np.linalg.cholesky(state.z_cov)
    total = np.zeros(data.n_groups)
    for _ in range(draws // 100):
        z = state.z_mean + rng.standard_normal((100, n, k)) @ z_chol.T
        for m in range(data.n_groups):
            d = data.group_dims[m]
            wc = np.linalg.cholesky(state.w_cov[m])
            w = state.w_group(m) + rng.standard_normal((100, d, k)) @ wc.T
            resid = data.group(m) - z @ np.swapaxes(w, 1, 2)
            total[m] += np.sum(resid ** 2)
    assert np.allclose(total / draws, exact, rtol=0.02)


def oracle_bound(state, data, h):
    """Sum of E log p - E log q written term by term with scipy distributions."""
    n = data.n_samples
    k = state.active_k
    total = 0.0
    tau_a, tau_b = state.tau_a, state.tau_b
    for m in range(data.n_groups):
        e_tau = tau_a[m] / tau_b[m]
        elog_tau = stats.loggamma(tau_a[m]).mean() - math.log(tau_b[m])
        w = state.w_group(m)
        for i in range(n):
            for j in range(data.group_dims[m]):
                mean_prod = state.z_mean[i] @ w[j]
                second = (np.outer(state.z_mean[i], state.z_mean[i]) + state.z_cov) * \
                    (np.outer(w[j], w[j]) + state.w_cov[m])
                e_sq = data.group(m)[i, j] ** 2 - 2 * data.group(m)[i, j] * mean_prod + second.sum()
                total += -0.5 * math.log(2 * math.pi) + 0.5 * elog_tau - 0.5 * e_tau * e_sq
        # tau prior and entropy
        total += (h.tau_shape * math.log(h.tau_rate) - math.lgamma(h.tau_shape)
                  + (h.tau_shape - 1) * elog_tau - h.tau_rate * e_tau)
        total += stats.gamma(tau_a[m], scale=1 / tau_b[m]).entropy()
    for i in range(n):
        zi2 = state.z_mean[i] @ state.z_mean[i] + np.trace(state.z_cov)
        total += -0.5 * k * math.log(2 * math.pi) - 0.5 * zi2
        total += stats.multivariate_normal(state.z_mean[i], state.z_cov).entropy()
    alpha = state.alpha
    e_alpha = alpha.expected_alpha
    elog_alpha = alpha.expected_log_alpha
    for m in range(data.n_groups):
        w = state.w_group(m)
        for j in range(data.group_dims[m]):
            for kk in range(k):
                w2 = w[j, kk] ** 2 + state.w_cov[m][kk, kk]
                total += 0.5 * (elog_alpha[m, kk] - math.log(2 * math.pi)) - 0.5 * e_alpha[m, kk] * w2
            total += stats.multivariate_normal(w[j], state.w_cov[m]).entropy()
    if isinstance(alpha, FullRankAlpha):
        for m in range(data.n_groups):
            for kk in range(k):
                a, b = alpha.a_alpha[m, kk], alpha.b_alpha[m, kk]
                elog = stats.loggamma(a).mean() - math.log(b)
                total += (h.alpha_shape * math.log(h.alpha_rate) - math.lgamma(h.alpha_shape)
                          + (h.alpha_shape - 1) * elog - h.alpha_rate * a / b)
                total += stats.gamma(a, scale=1 / b).entropy()
    else:
        total += -0.5 * h.lam * (np.sum(alpha.u ** 2) + np.sum(alpha.v ** 2))
    return total


@pytest.mark.parametrize("seed,full", [(0, True), (1, False), (2, True), (3, False)])
def test_bound_matches_term_by_term_oracle(seed, full):
    data, h, state = random_instance(seed, full_rank=full)
    h = default_hyperparameters(data.n_groups, h.k_init, rank=h.rank, tau_shape=1.0, tau_rate=2.0,
                                alpha_shape=0.5, alpha_rate=0.3)
    state = warm(state, data, h, sweeps=1)
    assert lower_bound(state, data, h) == pytest.approx(oracle_bound(state, data, h), rel=1e-9)


def test_scalar_bound_by_hand():
    # N = 2, one group of one variable, one factor, full-rank alpha
    data = build_dataset(np.array([[1.0], [-1.0]]), [1])
    h = default_hyperparameters(1, 1, tau_shape=1.0, tau_rate=1.0, alpha_shape=1.0, alpha_rate=1.0)
    from gfa.model import PosteriorState
    state = PosteriorState(
        z_mean=np.array([[0.5], [-0.5]]), z_cov=np.array([[0.5]]),
        w_mean=np.array([[1.0]]), w_cov=np.array([[[0.25]]]),
        tau_a=np.array([2.0]), tau_b=np.array([1.0]),
        alpha=FullRankAlpha(np.array([[1.0]]), np.array([[1.0]])), group_dims=(1,))
    # E[(x - wz)^2] = x^2 - 2 x E w E z + E w^2 E z^2, with E w^2 = 1.25, E z^2 = 0.75
    e_sq = 2 * (1 - 2 * 0.5 + 1.25 * 0.75)
    elog_tau = -0.5772156649015329 + 1.0  # digamma(2) - log 1
    lik = -math.log(2 * math.pi) + elog_tau - 0.5 * 2.0 * e_sq
    z = 2 * (-0.5 * 0.75 + 0.5 * math.log(0.5) + 0.5)
    elog_alpha = -0.5772156649015329  # digamma(1)
    w = 0.5 + 0.5 * math.log(0.25) + 0.5 * elog_alpha - 0.5 * 1.25
    # E log p(tau) = -E tau = -2; E log q(tau) = E log tau - 2
    tau = -2.0 - (elog_tau - 2.0)
    # prior and posterior on alpha coincide
    alpha = 0.0
    expected = lik + z + w + tau + alpha
    assert lower_bound(state, data, h) == pytest.approx(expected, rel=1e-12)


def _perturbations(state, rng, eps=1e-3):
    k = state.active_k
    a = rng.standard_normal((k, k)) * eps
    yield "z_mean", _evolve(state, z_mean=state.z_mean + eps * rng.standard_normal(state.z_mean.shape))
    yield "z_cov", _evolve(state, z_cov=state.z_cov + a @ a.T)
    yield "w_mean", _evolve(state, w_mean=state.w_mean + eps * rng.standard_normal(state.w_mean.shape))
    yield "tau_b", _evolve(state, tau_b=state.tau_b * (1 + eps))


@pytest.mark.parametrize("seed", range(4))
def test_updates_are_local_maxima(seed):
    data, h, state = random_instance(seed, n=8, full_rank=True)
    state = warm(state, data, h)
    rng = np.random.default_rng(seed)
    after = {
        "z_mean": update_z(state, data),
        "z_cov": update_z(state, data),
        "w_mean": update_w(state, data),
        "tau_b": update_tau(state, data, h),
    }
    for name, perturbed in _perturbations(after["z_mean"], rng):
        if name.startswith("z"):
            assert lower_bound(perturbed, data, h) <= lower_bound(after["z_mean"], data, h)
    for name, perturbed in _perturbations(after["w_mean"], rng):
        if name == "w_mean":
            assert lower_bound(perturbed, data, h) <= lower_bound(after["w_mean"], data, h)
    for name, perturbed in _perturbations(after["tau_b"], rng):
        if name == "tau_b":
            assert lower_bound(perturbed, data, h) <= lower_bound(after["tau_b"], data, h)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_every_update_non_decreasing(seed):
    data, h, state = random_instance(seed)
    prev = lower_bound(state, data, h)
    for _ in range(5):
        for step in (lambda s: prune_factors(s, h), lambda s: update_w(s, data),
                     lambda s: update_z(s, data), lambda s: update_alpha(s, h),
                     lambda s: update_tau(s, data, h)):
            state = step(state)
            cur = lower_bound(state, data, h)
            assert cur >= prev - 1e-8 * abs(prev)
            prev = cur


def test_pruning_drops_dead_factor():
    data, h, state = random_instance(5, n=10, dims=[3, 2], k=3, full_rank=True)
    state = warm(state, data, h)
    z = state.z_mean.copy()
    z[:, 1] = 1e-6
    pruned = prune_factors(_evolve(state, z_mean=z), h)
    assert pruned.active_k == 2
    assert pruned.w_mean.shape == (5, 2)
    assert pruned.alpha.expected_alpha.shape == (2, 2)
    pruned.check()


def test_pruning_keeps_one_factor():
    data, h, state = random_instance(6, n=10, dims=[3, 2], k=3, full_rank=False)
    pruned = prune_factors(_evolve(state, z_mean=np.full_like(state.z_mean, 1e-9)), h)
    assert pruned.active_k == 1
    assert isinstance(pruned.alpha, LowRankAlpha)
    pruned.check()


def test_fit_converges_and_is_deterministic():
    data, h, _ = random_instance(7, n=20, dims=[3, 3, 2], k=4, full_rank=False)
    a = fit(data, h, seed=11)
    b = fit(data, h, seed=11)
    assert a.converged
    assert np.array_equal(a.state.w_mean, b.state.w_mean)
    assert a.elbo_trace == b.elbo_trace
    assert np.all(np.diff(a.elbo_trace) >= -1e-8 * np.abs(a.elbo_trace[1:]))


@pytest.mark.parametrize("dims", [[6], [1, 1, 1, 1, 1, 1]])
def test_single_group_and_one_variable_groups(dims):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((15, 6))
    data = build_dataset(x, dims)
    m = len(dims)
    h = default_hyperparameters(m, 3, rank=min(m, 3) if m == 1 else 1)
    model = fit(data, h, seed=0)
    assert np.isfinite(model.elbo)
    model.state.check()


def test_scaling_is_undone_in_column_scales():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((20, 4)) * np.array([1.0, 10.0, 100.0, 0.1])
    data = build_dataset(x, [2, 2])
    centered, means, scales = prepare(data, scale=True)
    assert np.allclose(centered.data.std(axis=0), 1)
    assert np.allclose(centered.data * scales + means, x)
    model = fit(data, default_hyperparameters(2, 2), seed=0, scale=True)
    assert np.allclose(model.scales(), scales)


def test_init_is_seeded():
    data, h, _ = random_instance(8)
    a, b = init_state(data, h, 3), init_state(data, h, 3)
    assert np.array_equal(a.z_mean, b.z_mean)
    assert not np.array_equal(a.z_mean, init_state(data, h, 4).z_mean)


def test_sweep_keeps_state_valid():
    data, h, state = random_instance(9)
    for _ in range(3):
        state = vb_sweep(state, data, h)
        state.check()
