"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the summary lines are printed
at the end of the session (and inline with ``-s``).
"""

import sys
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, data_path
from instances import random_channel, random_df, random_dt

from relayopt import (
    AdjustParams,
    AlgoParams,
    ChannelSubproblem,
    DtSubproblem,
    compute_s_bound,
    rate_df,
    rate_dt,
    run_algorithm_1,
    run_algorithm_a,
    solve_channel_subproblem,
    solve_df_local,
    solve_dt_local,
    validate_step_sizes,
)
from relayopt.local_solvers import channel_kkt_residual, df_kkt_residual, rate_root_lhs
from relayopt.oracle import (
    brute_force_df_local,
    golden_section_dt_local,
    projected_gradient_channel,
    solve_p1_reference,
)
from relayopt.rates import LN2

pytestmark = pytest.mark.acceptance


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def last_window_variation(trace, window=100) -> float:
    P = trace.power_array()[-window:]
    return float(np.max(P.max(axis=0) - P.min(axis=0)))


def test_1_df_local_solver_optimality():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    gap, kkt = -np.inf, 0.0
    for _ in range(200):
        sub = random_df(rng)
        ps, pr = solve_df_local(sub)
        *_, best = brute_force_df_local(sub)
        gap = max(gap, best - sub.objective(ps, pr))
        kkt = max(kkt, df_kkt_residual(sub, ps, pr))
    elapsed = time.perf_counter() - t0
    record(1, gap <= 1e-6 and kkt <= 1e-8 and elapsed <= 10.0,
           f"DF solver vs brute force: worst shortfall {gap:.2e} (<= 1e-6), "
           f"KKT {kkt:.2e} (<= 1e-8), {elapsed:.2f} s (<= 10 s)")


def test_2_dt_local_solver_vs_golden_section():
    rng = np.random.default_rng(2)
    subs = [random_dt(rng) for _ in range(200)]
    t0 = time.perf_counter()
    gap = max(golden_section_dt_local(s)[1] - s.objective(solve_dt_local(s)) for s in subs)
    elapsed = time.perf_counter() - t0
    record(2, gap <= 1e-8 and elapsed <= 2.0,
           f"DT solver vs golden section: worst shortfall {gap:.2e} (<= 1e-8), "
           f"{elapsed:.2f} s (<= 2 s)")


def test_3_water_filling_limit():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        theta, mu = rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0)
        g, q = np.exp(rng.uniform(np.log(0.1), np.log(100))), rng.uniform(0, 10)
        p = solve_dt_local(DtSubproblem(theta, 1e-10, mu, q, g))
        wf = max(theta / (mu * LN2) - theta / g, 0.0)
        worst = max(worst, abs(p - wf) / wf if wf > 0 else abs(p))
    record(3, worst <= 1e-4,
           f"c = 1e-10 against water filling: worst relative deviation {worst:.2e} (<= 1e-4)")


def test_4_channel_subproblem():
    rng = np.random.default_rng(4)
    budget, gap, root, kkt, iters = 0.0, -np.inf, 0.0, 0.0, 0
    for _ in range(100):
        a_dt, a_df, beta, tmin = random_channel(rng)
        sub = ChannelSubproblem(a_dt, a_df, beta, tmin)
        sol = solve_channel_subproblem(sub)
        th = np.concatenate([sol.theta_dt, sol.theta_df])
        a = np.concatenate([a_dt, a_df])
        w = np.concatenate([np.ones(a_dt.size), 0.5 * np.ones(a_df.size)])
        f = float(np.sum(w * th * np.log1p(a / th)) / LN2)
        *_, f_pg, _ = projected_gradient_channel(a_dt, a_df, beta, tmin)
        budget = max(budget, abs(th.sum() - beta))
        gap = max(gap, f_pg - f)
        for ai, ti, wi in zip(a, th, w):
            if ti > tmin * (1 + 1e-12):
                # lhs(a/theta) = omega (DT) or 2 omega (DF)
                root = max(root, abs(float(rate_root_lhs(ai / ti)) - sol.omega / wi))
        kkt = max(kkt, channel_kkt_residual(sub, sol))
        iters = max(iters, sol.iterations, sol.root_iterations)
    record(4, budget <= 1e-10 and gap <= 1e-5 and root <= 1e-10 and iters <= 30,
           f"channel split: budget error {budget:.1e} (<= 1e-10), shortfall vs projected "
           f"gradient {gap:.1e} (<= 1e-5), root residual {root:.1e} (<= 1e-10), "
           f"Newton iterations <= {iters} (<= 30)")


def test_5_end_to_end_optimality(default_scenario, default_params, default_oracle):
    assert default_params.c == 1e-4 and default_params.K == 2
    assert default_scenario.theta_min == 0.01
    t0 = time.perf_counter()
    res = run_algorithm_a(default_scenario, default_params)
    elapsed = time.perf_counter() - t0
    rel = abs(res.objective - default_oracle.objective) / default_oracle.objective
    record(5, rel <= 0.01 and res.converged and res.iterations <= 50_000 and elapsed <= 60.0,
           f"default network: protocol {res.objective:.6f} vs centralized "
           f"{default_oracle.objective:.6f} ({100 * rel:.3f}% <= 1%), converged={res.converged} "
           f"at k={res.iterations} (<= 50000), {elapsed:.1f} s (<= 60 s)")


def test_6_primal_non_oscillation(default_run, default_params, default_scenario, shared_relay):
    var = last_window_variation(default_run.trace)
    # diagnostic only: keep iterating past the stopping point and find where the
    # window variation settles below 1e-3 for good
    more = run_algorithm_a(default_scenario, AlgoParams.from_dict(
        default_scenario.params, stop_tol=1e-12, max_iters=40_000), default_run.state)
    P = np.vstack([default_run.trace.power_array()[-99:], more.trace.power_array()])
    win = np.lib.stride_tricks.sliding_window_view(P, 100, axis=0)
    spread = (win.max(axis=-1) - win.min(axis=-1)).max(axis=1)
    above = np.flatnonzero(spread > 1e-3)
    settle = default_run.iterations + (above[-1] + 1 if above.size else 0) + 1
    params = AlgoParams.from_dict(shared_relay.params)
    regular = run_algorithm_a(shared_relay, params)
    var_reg = last_window_variation(regular.trace)
    plain = run_algorithm_a(shared_relay, AlgoParams.from_dict(
        shared_relay.params, c=0.0, allow_zero_c=True, max_iters=400))
    var_c0 = last_window_variation(plain.trace)
    record(6, var <= 1e-3 and var_reg <= 1e-3 and var_c0 > 1e-2,
           f"last-100 power variation at the stop: default {var:.1e} at k={default_run.iterations} "
           f"(<= 1e-3; slow transient, stays <= 1e-3 only from k={settle}), shared-relay "
           f"{var_reg:.1e} (<= 1e-3); shared-relay with c = 0 {var_c0:.2f} (> 1e-2)")


def test_7_relay_gain(default_scenario, default_params, default_run):
    base = run_algorithm_a(default_scenario.without_relays(), default_params)
    gain = default_run.objective / base.objective - 1.0
    tiny = AlgoParams.from_dict(default_scenario.params, theta_min=1e-6)
    sc_tiny = default_scenario.replace(theta_min=1e-6)
    with_r = run_algorithm_a(sc_tiny, tiny).objective
    without_r = run_algorithm_a(sc_tiny.without_relays(), tiny).objective
    record(7, gain >= 0.15 and with_r >= without_r - 1e-3,
           f"relay gain {100 * gain:.1f}% (>= 15%: {default_run.objective:.4f} vs "
           f"{base.objective:.4f}); theta_min=1e-6: {with_r:.4f} >= {without_r:.4f} - 1e-3")


def test_8_dominance():
    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(100):
        ps, pr = rng.uniform(1e-3, 10.0), rng.uniform(0.0, 10.0)
        theta = rng.uniform(0.01, 1.0)
        g_sd, g_rd = np.exp(rng.uniform(np.log(0.1), np.log(100), 2))
        g_sr = g_sd * rng.uniform(0.0, 1.0)
        if rng.random() < 0.1:
            g_sr = g_sd  # boundary case
        bad += not rate_df(ps, pr, theta, g_sr, g_sd, g_rd) < rate_dt(ps, theta, g_sd)
    record(8, bad == 0, f"rate_df < rate_dt whenever g_sr <= g_sd: {100 - bad}/100 instances")


def test_9_budget_adjustment(default_scenario, default_params, mirrored):
    t0 = time.perf_counter()
    adjust = AdjustParams(delta=0.3, schedule="diminishing")
    res = run_algorithm_1(default_scenario, default_params, adjust)
    beta_ref, obj_ref, _ = solve_p1_reference(default_scenario, 0.02)
    rel = (obj_ref - res.objective) / obj_ref
    # interior controls (above their floors) share one multiplier at the optimum
    floors = default_scenario.min_budget()
    interior = res.beta > floors + 1e-6
    om = res.run.state.omega[interior]
    spread = float(om.max() - om.min()) if om.size else 0.0
    mirrored_params = AlgoParams.from_dict(mirrored.params)
    mir = run_algorithm_1(mirrored, mirrored_params, adjust)
    mir_dev = float(np.max(np.abs(mir.beta - 0.5)))
    elapsed = time.perf_counter() - t0
    ok = (rel <= 0.01 and res.converged and mir_dev <= 0.02
          and spread <= 10 * adjust.outer_tol and elapsed <= 600)
    record(9, ok,
           f"budgets {np.round(res.beta, 4).tolist()} objective {res.objective:.5f} vs grid "
           f"reference {obj_ref:.5f} at {np.round(beta_ref, 2).tolist()} "
           f"(shortfall {100 * rel:.3f}% <= 1%); mirrored |beta - 0.5| {mir_dev:.1e} (<= 0.02); "
           f"omega spread {spread:.1e} (<= {10 * adjust.outer_tol:g}); {elapsed:.0f} s")


def test_10_proximal_equivalence(two_link):
    fast_p = AlgoParams.from_dict(two_link.params)
    classic_p = AlgoParams.from_dict(two_link.params, classic_proximal=True)
    fast = run_algorithm_a(two_link, fast_p)
    classic = run_algorithm_a(two_link, classic_p)
    diff = abs(fast.objective - classic.objective)
    record(10, fast.converged and classic.converged and diff <= 2 * fast_p.stop_tol,
           f"fast {fast.objective:.6f} vs classic {classic.objective:.6f} "
           f"(|diff| {diff:.1e} <= {2 * fast_p.stop_tol:g}); local solves fast "
           f"{fast.local_solves} ({fast.iterations} it), classic {classic.local_solves} "
           f"({classic.iterations} outer it)")


def test_11_step_size_bound(two_link):
    from conftest import build, gains_doc
    hand = build(gains_doc([1.0, 1.0], [[5.0], [5.0]], [[5.0], [5.0]], sources=[1, 1]))
    rep = validate_step_sizes(AlgoParams(c=1e-4, alpha=1e-5), hand, warn=False)
    params = AlgoParams.from_dict(two_link.params)
    two = validate_step_sizes(params, two_link, warn=False)
    res = run_algorithm_a(two_link, params)
    residual = max(res.trace.dual_residual[-1], res.trace.aux_change[-1])
    record(11, rep.s_bound == 4 and rep.bound == 1.25e-5 and two.ok and res.converged
           and residual <= 1e-3,
           f"hand example S={rep.s_bound} bound {rep.bound!r} (== 1.25e-05); two-link "
           f"alpha {two.alpha_max:g} <= {two.bound:g} (S={compute_s_bound(two_link)}) "
           f"converged at k={res.iterations}, residual {residual:.1e} (<= 1e-3)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
