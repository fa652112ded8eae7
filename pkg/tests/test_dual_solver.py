import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tnntn.channel import ChannelState
from tnntn.dual_solver import (DualOptions, DualState, StepSchedule, association_score,
                               dual_update, dual_value, link_quality, max_rsrp_serving,
                               optimal_association, optimal_epsilon, optimal_load, score_matrix,
                               solve_association)
from tnntn.linkmodel import RadioConfig, loads, network_slt, sinr_matrix

from conftest import random_channel


def state(beta, sat):
    beta = np.asarray(beta, dtype=float)
    return ChannelState(beta=beta, los=np.ones_like(beta, bool), sat_mask=np.asarray(sat, bool))


def bisect_root(n, n_s, rho, lo=0.0, hi=None, iters=200):
    """Smaller root of rho e^2 - (K + rho) e + K_S on [0, min(1, vertex)]."""
    f = lambda e: rho * e * e - (n + rho) * e + n_s
    hi = min(1.0, (n + rho) / (2 * rho)) if hi is None else hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---- step schedule ---------------------------------------------------------

def test_step_schedule_diminishing():
    s = StepSchedule(0.1)
    assert s(1) == 0.1 and s(4) == pytest.approx(0.05)
    vals = [s(t) for t in range(1, 200)]
    assert all(v > 0 for v in vals) and all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        s(0)


def test_default_alpha_step_scales_with_population():
    d = DualOptions().schedules(200)
    assert d[2](1) == pytest.approx(0.1 / 200)
    assert d[1](1) == pytest.approx(1e-2)


# ---- scores ------------------------------------------------------------------

def test_score_without_multipliers_is_log_weighted_rate(radio):
    ch = state([[1e-10, 1e-12]], [False, True])
    p = np.array([0.05, 0.04])
    d = DualState.initial(1, 2)
    k = np.array([1.0, 1.0])
    eps = 0.3
    g = sinr_matrix(ch.beta, p, ch.sat_mask, radio.noise_power_w)
    expect_sat = math.log(eps * 40e6 * eps * math.log2(1 + g[0, 1]))
    assert association_score(0, 1, ch, p, radio, d, eps, k) == pytest.approx(expect_sat)


def test_raising_price_lowers_score_by_same_amount(radio, rng):
    ch = random_channel(rng, 3, 6)
    p = radio.p_max_w(ch.sat_mask)
    d = DualState(lam=rng.uniform(0, 0.1, 6), mu=rng.normal(size=4), alpha=0.2, rho=1.0)
    k = rng.uniform(1, 5, 4)
    s0 = score_matrix(ch, p, radio, d, 0.4, k)
    d.mu[2] += 1.7
    s1 = score_matrix(ch, p, radio, d, 0.4, k)
    np.testing.assert_allclose(s0[:, 2] - s1[:, 2], 1.7, rtol=1e-12)
    np.testing.assert_array_equal(np.delete(s0, 2, 1), np.delete(s1, 2, 1))


def test_two_bs_hand_evaluation():
    radio = RadioConfig()
    n = radio.noise_power_w
    ch = state([[4e-10, 2e-12]], [False, True])
    p = np.array([n / 4e-10 * 15.0, n / 2e-12 * 3.0])    # SNR 15 and 3
    d = DualState(lam=np.array([0.01]), mu=np.array([0.5, 0.2]), alpha=0.0, rho=1.0)
    k = np.array([2.0, 0.3])                                # satellite load floored to 1
    eps = 0.25
    q_m = 10 * math.log10(n * 15.0) + 30
    q_s = 10 * math.log10(n * 3.0) + 30
    macro = math.log(0.75 * 40e6 * 0.75 / 2 * 4) + 0.01 * q_m - 0.5
    sat = math.log(0.25 * 40e6 * 0.25 / 1 * 2) + 0.01 * q_s - 0.2
    got = score_matrix(ch, p, radio, d, eps, k)[0]
    assert got[0] == pytest.approx(macro, rel=1e-12)
    assert got[1] == pytest.approx(sat, rel=1e-12)
    assert association_score(0, 0, ch, p, radio, d, eps, k) == pytest.approx(macro, rel=1e-12)


def test_scalar_and_matrix_scores_agree(radio, rng):
    ch = random_channel(rng, 3, 5)
    p = radio.p_max_w(ch.sat_mask) * rng.uniform(0.2, 1, 4)
    d = DualState(lam=rng.uniform(0, 0.2, 5), mu=rng.normal(size=4), alpha=0.0, rho=1.0)
    k = rng.uniform(0, 4, 4)
    for mode in ("db", "linear"):
        m = score_matrix(ch, p, radio, d, 0.6, k, mode=mode)
        for i in range(5):
            for j in range(4):
                assert association_score(i, j, ch, p, radio, d, 0.6, k, mode) == \
                    pytest.approx(m[i, j], rel=1e-12)


def test_zero_bandwidth_link_scores_minus_inf(radio):
    ch = state([[1e-10, 1e-12]], [False, True])
    s = score_matrix(ch, np.array([0.05, 0.05]), radio, DualState.initial(1, 2), 0.0, np.ones(2))
    assert np.isneginf(s[0, 1]) and np.isfinite(s[0, 0])


# ---- association -------------------------------------------------------------

def test_argmax_simple_and_ties():
    assert optimal_association([[1, 3, 2]])[0] == 1
    assert optimal_association([[2, 5, 5, 1]])[0] == 1
    assert optimal_association([[-np.inf, 0.0, 0.0]])[0] == 1


def test_all_minus_inf_row_is_error():
    with pytest.raises(ValueError, match="UE infeasible at current duals"):
        optimal_association([[0.0, 1.0], [-np.inf, -np.inf]])


@given(st.integers(0, 2 ** 32 - 1), st.floats(-100, 100))
@settings(max_examples=50, deadline=None)
def test_argmax_matches_enumeration_and_shift_invariant(seed, c):
    rng = np.random.default_rng(seed)
    s = rng.integers(-3, 4, size=(5, 4)).astype(float)   # small ints force ties
    got = optimal_association(s)
    for i in range(5):
        best = max(range(4), key=lambda j: (s[i, j], -j))
        assert got[i] == best
    np.testing.assert_array_equal(optimal_association(s + c), got)


# ---- load --------------------------------------------------------------------

def test_load_identities():
    assert optimal_load(np.array([1.3]), 0.3, 10)[0] == pytest.approx(1.0)
    assert optimal_load(np.array([1.0 + math.log(5)]), 0.0, 10)[0] == pytest.approx(5.0)
    assert optimal_load(np.array([1e6]), 0.0, 10)[0] == 10.0
    assert optimal_load(np.array([-1e6]), 0.0, 10)[0] == 0.0


@given(st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=100, deadline=None)
def test_load_stationarity(mu, alpha):
    k = optimal_load(np.array([mu]), alpha, 1000)[0]
    if 0 < k < 1000:
        # d/dk [(mu - alpha) k - k log k] = mu - alpha - log k - 1
        assert abs(mu - alpha - math.log(k) - 1) < 1e-12


# ---- split -------------------------------------------------------------------

def test_epsilon_boundaries_exact():
    for rho in (0.0, 1e-12, 0.5, 50.0, 1e6):
        assert optimal_epsilon(40, 0, rho) == 0.0
        assert optimal_epsilon(40, 40, rho) == 1.0


def test_epsilon_reference_point():
    e = optimal_epsilon(100, 6, 50.0)
    assert abs(50 * e * e - 150 * e + 6) < 1e-9
    assert e == pytest.approx(bisect_root(100, 6, 50.0), abs=1e-8)


def test_epsilon_small_rho_limit():
    assert optimal_epsilon(100, 6, 0.0) == pytest.approx(0.06, abs=1e-15)
    assert optimal_epsilon(100, 6, 1e-12) == pytest.approx(0.06, abs=1e-12)


def test_epsilon_empty_network():
    with pytest.raises(ValueError, match="empty network"):
        optimal_epsilon(0, 0, 1.0)


@given(st.integers(1, 5000), st.data(), st.floats(0.0, 1e4))
@settings(max_examples=200, deadline=None)
def test_epsilon_monotone_in_sat_load(n, data, rho):
    a = data.draw(st.integers(0, n))
    b = data.draw(st.integers(a, n))
    assert optimal_epsilon(n, a, rho) <= optimal_epsilon(n, b, rho)


# ---- dual update -------------------------------------------------------------

def test_tight_constraints_leave_state_unchanged_except_rho():
    opts = DualOptions()
    d = DualState(lam=np.array([0.2, 0.0]), mu=np.array([0.3, -0.1]), alpha=0.4, rho=1.0)
    srv = np.array([0, 1])
    nd = dual_update(d, srv, np.array([1.0, 1.0]), 0.5, np.array([-120.0, -120.0]), -120.0, opts, 2)
    np.testing.assert_array_equal(nd.lam, d.lam)
    np.testing.assert_array_equal(nd.mu, d.mu)
    assert nd.alpha == d.alpha
    assert nd.rho == pytest.approx(1.0 + 0.1 * 0.5)
    slack = dual_update(d, srv, np.array([1.0, 1.0]), 0.5, np.array([-120.0, -120.0]), -120.0,
                        DualOptions(rho_update="slackness"), 2)
    assert slack.rho == pytest.approx(max(1.0 - 0.1 * 0.5, 0.0))


def test_inactive_coverage_keeps_lambda_zero():
    d = DualState.initial(1, 1)
    nd = dual_update(d, np.array([0]), np.array([1.0]), 0.0, np.array([-90.0]), -120.0, DualOptions(), 1)
    assert nd.lam[0] == 0.0


def test_violated_coverage_raises_lambda():
    d = DualState.initial(1, 1)
    nd = dual_update(d, np.array([0]), np.array([1.0]), 0.0, np.array([-130.0]), -120.0, DualOptions(), 1)
    assert nd.lam[0] == pytest.approx(0.1)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=50, deadline=None)
def test_overloaded_bs_price_rises(seed):
    rng = np.random.default_rng(seed)
    n, b = 12, 4
    srv = rng.integers(0, b, n)
    assigned = loads(srv, b)
    k_star = np.maximum(assigned - rng.uniform(0.1, 3, b), 0.0)
    d = DualState(lam=np.zeros(n), mu=rng.normal(size=b), alpha=0.0, rho=1.0)
    nd = dual_update(d, srv, k_star, 0.2, np.full(n, -100.0), -120.0, DualOptions(), b)
    over = assigned > k_star
    assert np.all(nd.mu[over] > d.mu[over])
    assert np.all(nd.lam >= 0) and nd.rho >= 0


# ---- end-to-end --------------------------------------------------------------

def test_single_ue_single_bs():
    radio = RadioConfig()
    ch = state([[1e-9]], [False])
    res = solve_association(ch, np.array([0.05]), radio)
    assert res.serving.tolist() == [0]
    assert res.epsilon == 0.0
    assert res.converged


def six_ue_instance():
    beta = np.array([
        [3e-9, 1e-11, 4e-13],
        [2e-9, 2e-11, 4e-13],
        [8e-10, 1e-10, 4e-13],
        [1e-11, 5e-10, 4e-13],
        [4e-12, 2e-9, 4e-13],
        [1e-13, 1e-13, 4e-13],
    ])
    return state(beta, [False, False, True])


def test_never_worse_than_own_start():
    radio = RadioConfig()
    ch = six_ue_instance()
    p = radio.p_max_w(ch.sat_mask)
    start = network_slt(max_rsrp_serving(ch, p), 0.5, p, ch, radio)
    res = solve_association(ch, p, radio)
    assert res.slt >= start
    assert res.feasible


@pytest.mark.parametrize("rho_update", ["paper", "slackness"])
@pytest.mark.parametrize("mode", ["db", "linear"])
def test_variants_run_and_keep_projections(rho_update, mode):
    radio = RadioConfig()
    ch = six_ue_instance()
    p = radio.p_max_w(ch.sat_mask)
    seen = []
    res = solve_association(ch, p, radio, DualOptions(rho_update=rho_update, coverage_residual=mode),
                            on_iter=seen.append)
    assert seen
    for it in seen:
        assert np.all(it["dual"].lam >= 0) and it["dual"].rho >= 0
    assert res.dual.rho >= 0 and np.all(res.dual.lam >= 0)


def test_fixed_epsilon_zero_never_uses_satellite():
    radio = RadioConfig()
    ch = six_ue_instance()
    p = radio.p_max_w(ch.sat_mask)
    res = solve_association(ch, p, radio, DualOptions(fixed_epsilon=0.0))
    assert not np.any(ch.sat_mask[res.serving])
    assert res.epsilon == 0.0


def brute_force_primal(ch, p, radio):
    """max over coverage-feasible X of the SLT with the best split K_S/K."""
    n, b = ch.beta.shape
    covers = ch.beta * p[None, :] >= radio.p_min_w
    best = -np.inf
    for combo in itertools.product(range(b), repeat=n):
        srv = np.array(combo)
        if not np.all(covers[np.arange(n), srv]):
            continue
        eps = float(np.mean(ch.sat_mask[srv]))
        best = max(best, network_slt(srv, eps, p, ch, radio))
    return best


@pytest.mark.parametrize("seed", range(6))
def test_dual_value_bounds_brute_force_optimum(seed):
    rng = np.random.default_rng(100 + seed)
    radio = RadioConfig()
    n = int(rng.integers(3, 7))
    ch = random_channel(rng, 2, n, lo_db=-128.0, hi_db=-95.0)
    p = radio.p_max_w(ch.sat_mask)
    opt = brute_force_primal(ch, p, radio)
    if not np.isfinite(opt):
        pytest.skip("instance has no coverage-feasible association")
    seen = []
    res = solve_association(ch, p, radio, on_iter=seen.append)
    for it in seen:
        assert it["dual_value"] >= opt - 1e-9
    assert res.slt <= opt + 1e-9


def test_dual_value_matches_explicit_maximisation():
    """Check the closed-form dual value against enumeration over X and a fine eps grid."""
    rng = np.random.default_rng(7)
    radio = RadioConfig()
    ch = random_channel(rng, 2, 4, lo_db=-125.0, hi_db=-95.0)
    p = radio.p_max_w(ch.sat_mask)
    d = DualState(lam=rng.uniform(0, 0.05, 4), mu=rng.normal(1.0, 0.5, 3), alpha=0.3, rho=2.0)
    got = dual_value(ch, p, radio, d)

    q, q_min = link_quality(ch, p, radio)
    g = sinr_matrix(ch.beta, p, ch.sat_mask, radio.noise_power_w)
    a = np.log(40e6 * np.log2(1 + g)) + d.lam[:, None] * q - d.mu[None, :]
    kk = optimal_load(d.mu, d.alpha, 4)
    k_part = np.sum((d.mu - d.alpha) * kk - kk * np.log(kk))
    const = d.alpha * 4 - d.lam.sum() * q_min + d.rho
    grid = np.linspace(1e-6, 1 - 1e-6, 200001)
    best = -np.inf
    for combo in itertools.product(range(3), repeat=4):
        srv = np.array(combo)
        base = a[np.arange(4), srv].sum()
        ns = int(ch.sat_mask[srv].sum())
        h = 2 * (ns * np.log(grid) + (4 - ns) * np.log1p(-grid)) - d.rho * grid
        ends = [0.0 if ns == 0 else -np.inf, -d.rho if ns == 4 else -np.inf]
        best = max(best, base + max(h.max(), *ends))
    assert got == pytest.approx(best + k_part + const, abs=1e-6)
