"""Compiled scalar kernels for the protocol's inner loop.

These mirror the vectorized numpy solvers in :mod:`relayopt.local_solvers`
one scalar at a time; numpy's per-call overhead dominates on networks of a
few dozen links, and the protocol runs tens of thousands of rounds.  The
test suite checks both implementations against each other.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LN2 = math.log(2.0)
REGION_TOL = 1e-9


@njit(cache=True)
def f_core(theta, c, mu, q, g, v):
    lin = mu - c * q
    A = 2.0 * g * c * v
    B = c * v * theta + 2.0 * g * lin
    C = theta * (lin - g / LN2)
    if C >= 0.0:
        return 0.0
    disc = math.sqrt(max(B * B - 4.0 * A * C, 0.0))
    if B > 0.0:
        return -2.0 * C / (B + disc)
    if A > 0.0:
        return (disc - B) / (2.0 * A)
    return math.inf


@njit(cache=True)
def df_objective(ps, pr, theta, c, mu, nu, q_s, q_r, g_sr, g_sd, g_rd):
    r1 = 0.5 * theta * math.log1p(2.0 * (ps * g_sd + pr * g_rd) / theta) / LN2
    r2 = 0.5 * theta * math.log1p(2.0 * ps * g_sr / theta) / LN2
    return (min(r1, r2) - 0.5 * c * ((ps - q_s) ** 2 + (pr - q_r) ** 2)
            - mu * ps - nu * pr)


@njit(cache=True)
def _relaxed_value(ps, pr, theta, c, mu, nu, q_s, q_r, g_sd, g_rd):
    r1 = 0.5 * theta * math.log1p(2.0 * (ps * g_sd + pr * g_rd) / theta) / LN2
    return r1 - 0.5 * c * ((ps - q_s) ** 2 + (pr - q_r) ** 2) - mu * ps - nu * pr


@njit(cache=True)
def relaxed_sd(theta, c, mu, nu, q_s, q_r, g_sd, g_rd):
    G = g_sd * g_sd + g_rd * g_rd
    e = f_core(theta * G, c, g_sd * mu + g_rd * nu, g_sd * q_s + g_rd * q_r, G, 1.0)
    diff = (g_sd * nu - g_rd * mu) / c + g_rd * q_s - g_sd * q_r
    ps_in = (g_sd * e + g_rd * diff) / G
    pr_in = (g_rd * e - g_sd * diff) / G
    best_ps, best_pr, best_val = 0.0, 0.0, -math.inf
    if ps_in >= 0.0 and pr_in >= 0.0:
        best_ps, best_pr = ps_in, pr_in
        best_val = _relaxed_value(ps_in, pr_in, theta, c, mu, nu, q_s, q_r, g_sd, g_rd)
    ps = f_core(theta, c, mu, q_s, g_sd, 1.0)
    val = _relaxed_value(ps, 0.0, theta, c, mu, nu, q_s, q_r, g_sd, g_rd)
    if val > best_val:
        best_ps, best_pr, best_val = ps, 0.0, val
    pr = f_core(theta, c, nu, q_r, g_rd, 1.0)
    val = _relaxed_value(0.0, pr, theta, c, mu, nu, q_s, q_r, g_sd, g_rd)
    if val > best_val:
        best_ps, best_pr, best_val = 0.0, pr, val
    return best_ps, best_pr


@njit(cache=True)
def _gap(ps, pr, g_sr, g_sd, g_rd):
    scale = 1.0 + abs(g_rd * pr) + abs((g_sr - g_sd) * ps)
    return (g_rd * pr - (g_sr - g_sd) * ps) / scale


@njit(cache=True)
def df_local(theta, c, mu, nu, q_s, q_r, g_sr, g_sd, g_rd):
    """Scalar DF subproblem solution ``(ps, pr, case)``."""
    slope = (g_sr - g_sd) / g_rd
    ps1 = f_core(theta, c, mu, q_s, g_sr, 1.0)
    pr1 = max(q_r - nu / c, 0.0)
    gap1 = _gap(ps1, pr1, g_sr, g_sd, g_rd)
    if gap1 > REGION_TOL:
        return ps1, pr1, 1
    ps2, pr2 = relaxed_sd(theta, c, mu, nu, q_s, q_r, g_sd, g_rd)
    gap2 = _gap(ps2, pr2, g_sr, g_sd, g_rd)
    if gap2 < -REGION_TOL:
        return ps2, pr2, 2
    ps3 = f_core(theta, c, mu + slope * nu, q_s + slope * q_r, g_sr, 1.0 + slope * slope)
    pr3 = slope * ps3
    j1 = -math.inf
    if gap1 >= -REGION_TOL:
        j1 = df_objective(ps1, pr1, theta, c, mu, nu, q_s, q_r, g_sr, g_sd, g_rd)
    j2 = -math.inf
    if gap2 <= REGION_TOL:
        j2 = df_objective(ps2, pr2, theta, c, mu, nu, q_s, q_r, g_sr, g_sd, g_rd)
    j3 = df_objective(ps3, pr3, theta, c, mu, nu, q_s, q_r, g_sr, g_sd, g_rd)
    if j1 >= j3 and j1 >= j2:
        return ps1, pr1, 1
    if j2 > j3 and j2 > j1:
        return ps2, pr2, 2
    return ps3, pr3, 3


@njit(cache=True)
def link_powers(q, duals, theta_dt, theta_df, c_dt, c_df, dt_row, df_src_row, df_relay_row,
                g_sd_dt, g_sr, g_sd_df, g_rd, out):
    """All link decisions at prices ``duals`` and centers ``q`` (written to ``out``)."""
    M = theta_dt.shape[0]
    L = theta_df.shape[0]
    for m in range(M):
        out[m] = f_core(2.0 * theta_dt[m], c_dt[m], duals[dt_row[m]], q[m], g_sd_dt[m], 1.0)
    for i in range(L):
        ps, pr, _ = df_local(theta_df[i], c_df[i], duals[df_src_row[i]], duals[df_relay_row[i]],
                             q[M + i], q[M + L + i], g_sr[i], g_sd_df[i], g_rd[i])
        out[M + i] = ps
        out[M + L + i] = pr


@njit(cache=True)
def dual_update(duals, x, alpha, row_of, p_max, out):
    """``out = [duals + alpha (E x - p_max)]^+`` with ``E`` given by ``row_of``."""
    usage = np.zeros(duals.shape[0])
    for n in range(x.shape[0]):
        usage[row_of[n]] += x[n]
    for r in range(duals.shape[0]):
        out[r] = max(duals[r] + alpha[r] * (usage[r] - p_max[r]), 0.0)


# -- channel subproblem -----------------------------------------------------------


@njit(cache=True)
def rate_root_lhs(u):
    if u < 1e-3:
        return u * u * (0.5 - u * (2.0 / 3.0 - u * (0.75 - u * 0.8))) / LN2
    return (math.log1p(u) - u / (1.0 + u)) / LN2


@njit(cache=True)
def _lhs_derivative(u):
    return u / (LN2 * (1.0 + u) ** 2)


@njit(cache=True)
def invert_rate_root(b, u0, tol, max_iter):
    """``(u, iterations)`` with ``rate_root_lhs(u) = b``; ``u0 <= 0`` means no hint."""
    lo = math.log(math.sqrt(2.0 * LN2 * b))
    hi_u = 2.0 ** (b + 1.0 / LN2) - 1.0
    hi = math.log(hi_u) if hi_u > 0 else lo + 1.0
    if u0 <= 0.0:
        u0 = math.sqrt(2.0 * LN2 * b) if b < 0.5 else 2.0 ** (b + 1.0 / LN2)
    s = min(max(math.log(u0), lo), hi)
    for it in range(1, max_iter + 1):
        u = math.exp(s)
        r = rate_root_lhs(u) - b
        if r > 0:
            hi = s
        else:
            lo = s
        if abs(r) <= tol * max(1.0, b):
            return u, it
        s_new = s - r / (_lhs_derivative(u) * u)
        if not (lo < s_new < hi):
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= 1e-16 * max(1.0, abs(s)):
            return math.exp(s_new), it
        s = s_new
    return math.exp(s), max_iter


@njit(cache=True)
def _budget(a_dt, a_df, u1, u2, tmin, beta):
    total = 0.0
    deriv_dt = 0.0
    deriv_df = 0.0
    for a in a_dt:
        t = a / u1
        if t > tmin:
            total += t
            deriv_dt += t
        else:
            total += tmin
    for a in a_df:
        t = a / u2
        if t > tmin:
            total += t
            deriv_df += t
        else:
            total += tmin
    return total - beta, deriv_dt, deriv_df


@njit(cache=True)
def channel_node(a_dt, a_df, beta, tmin, u_hint, tol, max_iter, t_dt, t_df):
    """Channel split of one control node; mirrors ``solve_channel_subproblem``.

    Writes the shares into ``t_dt``/``t_df`` and returns ``(omega, u1)``;
    ``u1 <= 0`` signals that no interior root was needed.
    """
    n = a_dt.shape[0] + a_df.shape[0]
    any_pos = False
    for a in a_dt:
        any_pos = any_pos or a > 0
    for a in a_df:
        any_pos = any_pos or a > 0
    t_dt[:] = tmin
    t_df[:] = tmin
    if n == 0 or not any_pos:
        return 0.0, -1.0
    if beta <= n * tmin * (1 + 1e-12):
        omega = 0.0
        for a in a_dt:
            if a > 0:
                omega = max(omega, rate_root_lhs(a / tmin))
        for a in a_df:
            if a > 0:
                omega = max(omega, 0.5 * rate_root_lhs(a / tmin))
        return omega, -1.0
    has_df = a_df.shape[0] > 0
    a_max = 0.0
    for a in a_dt:
        a_max = max(a_max, a)
    for a in a_df:
        a_max = max(a_max, a)
    if u_hint > 0:
        s = math.log(u_hint)
    else:
        s = math.log(max(a_max * n / beta, 1e-300))
    lo, hi = -math.inf, math.inf
    step = 1.0
    u2_prev = -1.0
    for it in range(1, max_iter + 1):
        u1 = math.exp(s)
        u2 = 1.0
        if has_df:
            u2, _ = invert_rate_root(2.0 * rate_root_lhs(u1), u2_prev, 1e-13, 60)
            u2_prev = u2
        f, d_dt, d_df = _budget(a_dt, a_df, u1, u2, tmin, beta)
        dlog_u2 = 0.0
        if has_df:
            dlog_u2 = 2.0 * _lhs_derivative(u1) * u1 / (_lhs_derivative(u2) * u2)
        d = -d_dt - d_df * dlog_u2
        if f > 0:
            lo = s
        else:
            hi = s
        if abs(f) <= tol * max(beta, 1.0) or hi - lo <= 1e-15 * max(1.0, abs(s)):
            break
        if math.isinf(lo) or math.isinf(hi):
            s_new = s - f / d if d < 0 else s
            s_new = min(max(s_new, s - step), s + step)
            if s_new == s:
                s_new = s + step if f > 0 else s - step
            step *= 2.0
        else:
            s_new = s - f / d if d < 0 else 0.5 * (lo + hi)
            if not (lo < s_new < hi):
                s_new = 0.5 * (lo + hi)
        s = s_new
    u1 = math.exp(s)
    u2 = 1.0
    if has_df:
        u2, _ = invert_rate_root(2.0 * rate_root_lhs(u1), u2_prev, 1e-13, 60)
    free_sum = 0.0
    n_free = 0
    for i in range(a_dt.shape[0]):
        t_dt[i] = max(a_dt[i] / u1, tmin)
        if t_dt[i] > tmin:
            free_sum += t_dt[i]
            n_free += 1
    for i in range(a_df.shape[0]):
        t_df[i] = max(a_df[i] / u2, tmin)
        if t_df[i] > tmin:
            free_sum += t_df[i]
            n_free += 1
    if free_sum > 0:
        scale = (beta - tmin * (n - n_free)) / free_sum
        for i in range(a_dt.shape[0]):
            if t_dt[i] > tmin:
                t_dt[i] *= scale
        for i in range(a_df.shape[0]):
            if t_df[i] > tmin:
                t_df[i] *= scale
    return rate_root_lhs(u1), u1
