import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from instances import random_channel, random_df, random_dt
from scipy.optimize import brentq

from relayopt import (
    ChannelSubproblem,
    DfSubproblem,
    DtSubproblem,
    f_core,
    solve_channel_subproblem,
    solve_df_local,
    solve_dt_local,
    solve_rate_root,
)
from relayopt.local_solvers import (
    channel_a_values,
    channel_kkt_residual,
    df_kkt_residual,
    dt_kkt_residual,
    f_core_radical,
    invert_rate_root,
    rate_root_lhs,
    solve_df_unregularized,
    solve_dt_unregularized,
)
from relayopt.oracle import brute_force_df_local, golden_section_dt_local, projected_gradient_channel
from relayopt.rates import LN2, dt_derivative

# -- f_core and DT ------------------------------------------------------------------


def test_f_core_matches_radical_form(rng):
    for _ in range(200):
        theta, c, mu = rng.uniform(0.01, 1), rng.choice([1e-4, 1e-2, 1.0]), rng.uniform(0.01, 1)
        q, g, v = rng.uniform(0, 10), rng.uniform(0.1, 100), rng.uniform(0.5, 3)
        assert f_core(theta, c, mu, q, g, v) == pytest.approx(
            float(f_core_radical(theta, c, mu, q, g, v)), rel=1e-7, abs=1e-9)


def test_f_core_clamps_to_zero():
    # price above the marginal rate at zero power and nothing to pull toward
    assert f_core(1.0, 1e-2, 100.0, 0.0, 5.0) == 0.0


def test_f_core_small_c_limit(rng):
    # f_core's rate term is theta/2 log2(1 + 2 g p / theta): its water level is half the DT one
    for _ in range(50):
        theta, mu, g = rng.uniform(0.05, 1), rng.uniform(0.01, 1), rng.uniform(0.1, 100)
        half = max(theta / (2 * mu * LN2) - theta / (2 * g), 0.0)
        assert f_core(theta, 1e-10, mu, rng.uniform(0, 10), g) == pytest.approx(
            half, rel=1e-4, abs=1e-12)


def test_f_core_vectorized(rng):
    args = [rng.uniform(0.1, 1, 7) for _ in range(6)]
    vec = f_core(*args)
    assert vec.shape == (7,)
    for i in range(7):
        assert vec[i] == f_core(*(a[i] for a in args))


def test_dt_example_against_golden_section():
    sub = DtSubproblem(theta=1.0, c=1e-4, mu=0.3, q_s=2.0, g_sd=5.0)
    p = solve_dt_local(sub)
    _, best = golden_section_dt_local(sub)
    assert sub.objective(p) >= best - 1e-8
    # f_core's own objective uses theta/2 log2(1 + 2 g p / theta): same subproblem at half share
    half = DtSubproblem(theta=0.5, c=1e-4, mu=0.3, q_s=2.0, g_sd=5.0)
    p_half, best_half = golden_section_dt_local(half)
    assert f_core(1.0, 1e-4, 0.3, 2.0, 5.0, 1.0) == pytest.approx(p_half, abs=1e-6)
    assert half.objective(f_core(1.0, 1e-4, 0.3, 2.0, 5.0, 1.0)) >= best_half - 1e-8


def test_dt_zero_price_is_finite():
    sub = DtSubproblem(theta=0.5, c=1e-4, mu=0.0, q_s=0.0, g_sd=10.0)
    p = solve_dt_local(sub)
    assert math.isfinite(p) and p > 0
    _, best = golden_section_dt_local(sub)
    assert sub.objective(p) >= best - 1e-8
    assert dt_kkt_residual(sub, p) <= 1e-10


def test_dt_fixed_point():
    theta, g, c = 0.4, 8.0, 1e-3
    q = 1.7
    mu = float(dt_derivative(q, theta, g))  # stationary at q with no proximal pull
    assert solve_dt_local(DtSubproblem(theta, c, mu, q, g)) == pytest.approx(q, rel=1e-12)


def test_dt_random_against_golden_section(rng):
    for _ in range(100):
        sub = random_dt(rng)
        p = solve_dt_local(sub)
        _, best = golden_section_dt_local(sub)
        assert sub.objective(p) >= best - 1e-8
        assert dt_kkt_residual(sub, p) <= 1e-8 * max(1.0, p)


@pytest.mark.parametrize("seed", range(3))
def test_water_filling_limit(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        theta, mu, g = rng.uniform(0.05, 1), rng.uniform(0.01, 1), rng.uniform(0.1, 100)
        p = solve_dt_local(DtSubproblem(theta, 1e-10, mu, rng.uniform(0, 10), g))
        wf = max(theta / (mu * LN2) - theta / g, 0.0)
        assert abs(p - wf) <= 1e-4 * max(wf, 1e-12) + 1e-12


@settings(max_examples=150, deadline=None)
@given(theta=st.floats(0.01, 1.0), c=st.sampled_from([1e-4, 1e-2, 1.0]),
       mu=st.floats(0.0, 1.0), q=st.floats(0.0, 10.0), g=st.floats(0.1, 100.0))
def test_dt_kkt_property(theta, c, mu, q, g):
    sub = DtSubproblem(theta, c, mu, q, g)
    p = solve_dt_local(sub)
    assert p >= 0
    assert dt_kkt_residual(sub, p) <= 1e-8 * max(1.0, p, c * p)


# -- DF -----------------------------------------------------------------------------


def test_df_case1_relay_follows_center():
    # strong combined branch, weak source-relay hop: the source-relay branch binds
    sub = DfSubproblem(theta=1.0, c=1e-2, mu=0.2, nu=0.0, q_s=1.0, q_r=2.5,
                       g_sr=2.0, g_sd=1.0, g_rd=50.0)
    ps, pr, case = solve_df_local(sub, return_case=True)
    assert case == 1
    assert pr == pytest.approx(2.5, abs=1e-15)


def test_df_huge_prices_give_zero():
    sub = DfSubproblem(1.0, 1e-2, 1e3, 1e3, 0.0, 0.0, 10.0, 1.0, 5.0)
    assert solve_df_local(sub) == (0.0, 0.0)


def test_df_rejects_zero_c():
    with pytest.raises(ValueError):
        solve_df_local(DfSubproblem(1.0, 0.0, 0.1, 0.1, 0.0, 0.0, 10.0, 1.0, 5.0))


def test_df_random_against_brute_force(rng):
    for _ in range(60):
        sub = random_df(rng)
        ps, pr = solve_df_local(sub)
        bs, br, best = brute_force_df_local(sub)
        assert sub.objective(ps, pr) >= best - 1e-6
        # the objective is strictly concave, so the maximizer is unique
        assert math.hypot(ps - bs, pr - br) <= 1e-3 * max(1.0, math.hypot(ps, pr))
        assert df_kkt_residual(sub, ps, pr) <= 1e-8


def test_df_all_cases_reached(rng):
    seen = set()
    for _ in range(400):
        seen.add(solve_df_local(random_df(rng), return_case=True)[2])
    assert seen == {1, 2, 3}


def test_df_vectorized_matches_scalar(rng):
    subs = [random_df(rng) for _ in range(30)]
    keys = ("theta", "c", "mu", "nu", "q_s", "q_r", "g_sr", "g_sd", "g_rd")
    stacked = DfSubproblem(*(np.array([getattr(s, k) for s in subs]) for k in keys))
    ps, pr = solve_df_local(stacked)
    for i, s in enumerate(subs):
        assert (ps[i], pr[i]) == solve_df_local(s)


@settings(max_examples=150, deadline=None)
@given(theta=st.floats(0.01, 1.0), c=st.sampled_from([1e-4, 1e-2]),
       mu=st.floats(0.0, 1.0), nu=st.floats(0.0, 1.0),
       q_s=st.floats(0.0, 10.0), q_r=st.floats(0.0, 10.0),
       g_sd=st.floats(0.1, 50.0), ratio=st.floats(1.01, 50.0), g_rd=st.floats(0.1, 100.0))
def test_df_kkt_property(theta, c, mu, nu, q_s, q_r, g_sd, ratio, g_rd):
    sub = DfSubproblem(theta, c, mu, nu, q_s, q_r, g_sd * ratio, g_sd, g_rd)
    ps, pr = solve_df_local(sub)
    assert ps >= 0 and pr >= 0
    assert df_kkt_residual(sub, ps, pr) <= 1e-7


def test_unregularized_solvers():
    assert solve_dt_unregularized(1.0, 0.0, 2.0, 0.8) == 0.8
    wf = 1.0 / (0.5 * LN2) - 1.0 / 2.0
    assert solve_dt_unregularized(1.0, 0.5, 2.0, 10.0) == pytest.approx(wf)
    ps, pr = solve_df_unregularized(1.0, 0.1, 0.0, 20.0, 1.0, 100.0, 1.0, 1.0)
    assert pr == 1.0  # zero relay price: largest relay power in the maximizing set


# -- rate root and channel -------------------------------------------------------------


def test_rate_root_examples():
    x = solve_rate_root(1.0, 0.5)

    def lhs(x):
        return math.log2(1 + 1 / x) - (1 / x) / (LN2 * (1 + 1 / x)) - 0.5

    ref = brentq(lhs, 1e-12, 1e12, xtol=1e-15, rtol=1e-15)
    assert x == pytest.approx(ref, abs=1e-9)
    assert solve_rate_root(2.0, 0.5) == pytest.approx(2 * x, rel=1e-13)
    assert solve_rate_root(1.0, 0.9) < x
    with pytest.raises(ValueError):
        solve_rate_root(1.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(b=st.floats(1e-8, 30.0))
def test_rate_root_residual(b):
    u, it = invert_rate_root(b)
    assert abs(float(rate_root_lhs(u)) - b) <= 1e-10 * max(1.0, b)
    assert it <= 60


def test_rate_root_lhs_small_u_series():
    u = np.array([1e-9, 1e-6, 1e-4, 1e-3])
    exact = u ** 2 / (2 * LN2)  # leading term of the series
    assert np.allclose(rate_root_lhs(u), exact, rtol=1e-2)
    assert np.all(np.diff(rate_root_lhs(np.geomspace(1e-8, 1e8, 200))) > 0)


def test_channel_a_values_examples(two_link):
    # powers [ps_dt, ps_df, pr_df]
    lk = two_link.links
    a_dt, a_df = channel_a_values(two_link, np.array([3.0, 0.0, 1.0]))
    assert a_dt[0] == pytest.approx(lk.g_sd_dt[0] * 3.0)
    assert a_df[0] == 0.0
    a_dt, a_df = channel_a_values(two_link, np.array([0.0, 1.0, 1e3]))
    assert a_df[0] == pytest.approx(2 * lk.g_sr[0] * 1.0)  # source-relay hop is smaller


def test_channel_symmetry_and_zero_link():
    sol = solve_channel_subproblem(ChannelSubproblem(np.array([5.0, 5.0]), np.zeros(0), 0.8, 0.01))
    assert np.allclose(sol.theta_dt, 0.4, atol=1e-13)
    sol = solve_channel_subproblem(ChannelSubproblem(np.array([5.0, 0.0]), np.zeros(0), 0.8, 0.01))
    assert sol.theta_dt[1] == 0.01
    assert sol.theta_dt[0] == pytest.approx(0.79, abs=1e-13)


def test_channel_zero_powers():
    sol = solve_channel_subproblem(ChannelSubproblem(np.zeros(2), np.zeros(1), 0.5, 0.01))
    assert sol.omega == 0.0
    assert np.all(sol.theta_dt == 0.01) and np.all(sol.theta_df == 0.01)


def test_channel_rejects_infeasible_budget():
    with pytest.raises(ValueError):
        solve_channel_subproblem(ChannelSubproblem(np.ones(3), np.ones(2), 0.04, 0.01))


def test_channel_random_against_projected_gradient(rng):
    for _ in range(25):
        a_dt, a_df, beta, tmin = random_channel(rng)
        sub = ChannelSubproblem(a_dt, a_df, beta, tmin)
        sol = solve_channel_subproblem(sub)
        th = np.concatenate([sol.theta_dt, sol.theta_df])
        assert abs(th.sum() - beta) <= 1e-10
        assert np.all(th >= tmin)
        *_, f_pg, _ = projected_gradient_channel(a_dt, a_df, beta, tmin)
        w = np.concatenate([np.ones(a_dt.size), 0.5 * np.ones(a_df.size)])
        a = np.concatenate([a_dt, a_df])
        f = float(np.sum(w * th * np.log1p(a / th)) / LN2)
        assert f >= f_pg - 1e-5
        assert channel_kkt_residual(sub, sol) <= 1e-9
        assert sol.iterations <= 30


def test_channel_dt_df_multiplier_relation(rng):
    # an active DF link's share satisfies lhs(a/theta) = 2 omega, a DT link lhs = omega
    sub = ChannelSubproblem(np.array([30.0, 4.0]), np.array([60.0]), 0.9, 0.01)
    sol = solve_channel_subproblem(sub)
    assert rate_root_lhs(30.0 / sol.theta_dt[0]) == pytest.approx(sol.omega, rel=1e-10)
    assert rate_root_lhs(60.0 / sol.theta_df[0]) == pytest.approx(2 * sol.omega, rel=1e-10)


def test_channel_warm_hint_same_answer(rng):
    a_dt, a_df, beta, tmin = random_channel(rng, 3, 3)
    sub = ChannelSubproblem(a_dt, a_df, beta, tmin)
    cold = solve_channel_subproblem(sub)
    u1 = float(invert_rate_root(cold.omega)[0]) if cold.omega > 0 else None
    warm = solve_channel_subproblem(sub, u_hint=u1)
    assert np.allclose(cold.theta_dt, warm.theta_dt, atol=1e-12)
    assert np.allclose(cold.theta_df, warm.theta_df, atol=1e-12)
    assert warm.iterations <= cold.iterations
