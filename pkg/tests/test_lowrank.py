import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfa.lowrank import (
    LOG_CAP,
    alpha_gradient,
    alpha_objective,
    closed_form_alpha,
    expected_alpha,
    optimize_uv,
)
from gfa.model import InnerOptSettings, LowRankAlpha


def random_alpha_problem(seed, scale=0.5):
    rng = np.random.default_rng(seed)
    m, k = rng.integers(1, 7, size=2)
    r = int(rng.integers(1, min(m, k) + 1))
    u = rng.standard_normal((m, r)) * scale
    v = rng.standard_normal((k, r)) * scale
    mu_u = rng.standard_normal(m) * scale
    mu_v = rng.standard_normal(k) * scale
    ww = rng.gamma(2.0, 1.0, size=(m, k))
    d = rng.integers(1, 10, size=m)
    lam = float(rng.uniform(0.01, 1.0))
    return u, v, mu_u, mu_v, ww, d, lam


def finite_difference(args, which, step=1e-6):
    args = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
    x = args[which]
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        hi = alpha_objective(*args)
        x[idx] = orig - step
        lo = alpha_objective(*args)
        x[idx] = orig
        out[idx] = (hi - lo) / (2 * step)
    return out


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed):
    args = random_alpha_problem(seed)
    grads = alpha_gradient(*args)
    for which, g in enumerate(grads):
        fd = finite_difference(args, which)
        scale = max(1.0, np.abs(fd).max())
        assert np.max(np.abs(g - fd)) / scale < 1e-5


def test_gradient_zero_where_clamped():
    u = np.array([[10.0]])
    v = np.array([[10.0]])
    mu = np.zeros(1)
    gu, gv, gmu_u, gmu_v = alpha_gradient(u, v, mu, mu, np.ones((1, 1)), [3], 0.0)
    assert gu[0, 0] == 0 and gmu_u[0] == 0
    assert np.isfinite(alpha_objective(u, v, mu, mu, np.ones((1, 1)), [3], 0.0))


def test_log_alpha_is_clamped():
    big = np.full((2, 1), 50.0)
    a = expected_alpha(big, big, np.zeros(2), np.zeros(2))
    assert np.allclose(a, 1e12)
    a = expected_alpha(big, -big, np.zeros(2), np.zeros(2))
    assert np.allclose(a, 1e-12)
    assert LOG_CAP == pytest.approx(np.log(1e12))


def test_objective_example():
    # one group, one factor, alpha = e: D log alpha - ww alpha - lam (u^2 + v^2)
    u = np.array([[1.0]])
    v = np.array([[1.0]])
    f = alpha_objective(u, v, np.zeros(1), np.zeros(1), np.array([[2.0]]), [3], 0.5)
    assert f == pytest.approx(3 - 2 * np.e - 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_optimizer_never_worsens(seed):
    u, v, mu_u, mu_v, ww, d, lam = random_alpha_problem(seed, scale=1.5)
    start = LowRankAlpha(u, v, mu_u, mu_v, LOG_CAP)
    res = optimize_uv(start, ww, d, lam)
    before = alpha_objective(u, v, mu_u, mu_v, ww, d, lam)
    a = res.alpha
    after = alpha_objective(a.u, a.v, a.mu_u, a.mu_v, ww, d, lam)
    assert after >= before
    assert res.objective_end == pytest.approx(after)
    assert res.objective_start == pytest.approx(before)


def test_optimizer_returns_input_at_optimum():
    u, v, mu_u, mu_v, ww, d, lam = random_alpha_problem(4)
    first = optimize_uv(LowRankAlpha(u, v, mu_u, mu_v, LOG_CAP), ww, d, lam,
                        InnerOptSettings(max_iters=2000, grad_tol=1e-12))
    second = optimize_uv(first.alpha, ww, d, lam)
    assert second.objective_end >= first.objective_end


@pytest.mark.parametrize("seed", range(5))
def test_full_rank_recovers_closed_form(seed):
    rng = np.random.default_rng(seed)
    m, k = 3, 4
    ww = rng.gamma(2.0, 1.0, size=(m, k))
    d = np.array([2, 5, 3])
    start = LowRankAlpha(rng.standard_normal((m, m)) * 0.1, rng.standard_normal((k, m)) * 0.1,
                         np.zeros(m), np.zeros(k), LOG_CAP)
    res = optimize_uv(start, ww, d, 1e-12, InnerOptSettings(max_iters=5000, grad_tol=1e-12))
    target = closed_form_alpha(ww, d)
    assert np.allclose(res.alpha.expected_alpha, target, rtol=1e-4)
