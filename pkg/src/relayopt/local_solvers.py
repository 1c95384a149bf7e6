"""Closed-form maximizers of the per-link and per-control-node subproblems.

Power subproblems (one per DT link and per DF link)::

    DT:  max_{p >= 0}  R_dt(p) - c/2 (p - q)^2 - mu p
    DF:  max_{ps, pr >= 0}  R_df(ps, pr) - c/2 (ps - qs)^2 - c/2 (pr - qr)^2
                            - mu ps - nu pr

Channel subproblem (one per control node)::

    max sum_links R(theta)  s.t.  sum theta <= beta,  theta >= theta_min

The power solvers are vectorized: every argument may be a numpy array and
all arrays broadcast together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .rates import LN2, df_branches, dt_derivative, rate_df, rate_dt

__all__ = [
    "f_core",
    "f_core_radical",
    "DtSubproblem",
    "DfSubproblem",
    "solve_dt_local",
    "solve_df_local",
    "dt_kkt_residual",
    "df_kkt_residual",
    "df_kink_weight",
    "solve_dt_unregularized",
    "solve_df_unregularized",
    "rate_root_lhs",
    "solve_rate_root",
    "invert_rate_root",
    "channel_a_values",
    "ChannelSubproblem",
    "ChannelSolution",
    "solve_channel_subproblem",
    "channel_kkt_residual",
]

# case labels returned by solve_df_local(..., return_case=True)
CASE_SR_LIMITED = 1  # source-relay branch active, R1 > R2
CASE_SD_LIMITED = 2  # combined branch active, R1 < R2
CASE_BALANCED = 3  # on the kink, R1 == R2

REGION_TOL = 1e-9


def f_core(theta, c, mu, q, g, v=1.0):
    """Proximal water-filling level.

    Returns the maximizer over ``p >= 0`` of::

        theta/2 * log2(1 + 2 g p / theta) - c/2 (v p^2 - 2 q p) - mu p

    i.e. the nonnegative solution of ``g / (ln2 (1 + 2 g p / theta)) =
    mu + c (v p - q)``.  Multiplying out gives a quadratic whose positive
    root is computed in a cancellation-free form; unlike the radical form
    it stays valid at ``mu = 0``.  With ``c = 0`` the plain water-filling
    level is returned (``inf`` when ``mu = 0``).
    """
    theta, c, mu, q, g, v = np.broadcast_arrays(*(np.asarray(x, float)
                                                  for x in (theta, c, mu, q, g, v)))
    lin = mu - c * q
    A = 2.0 * g * c * v
    B = c * v * theta + 2.0 * g * lin
    C = theta * (lin - g / LN2)
    disc = np.sqrt(np.maximum(B * B - 4.0 * A * C, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        stable = -2.0 * C / (B + disc)  # B > 0
        direct = (disc - B) / (2.0 * A)  # B <= 0, A > 0
        root = np.where(B > 0, stable, np.where(A > 0, direct, np.inf))
    out = np.where(C < 0, root, 0.0)
    return out if out.ndim else float(out)


def f_core_radical(theta, c, mu, q, g, v=1.0):
    """Radical form of :func:`f_core`; only defined for ``mu > 0``, ``c > 0``."""
    theta, c, mu, q, g, v = (np.asarray(x, float) for x in (theta, c, mu, q, g, v))
    x = mu / (c * v) - q / v + theta / (mu * LN2) - theta / (2 * g)
    y = 2 * q * theta / (mu * v * LN2) + theta ** 2 / (g * mu * LN2) \
        - theta ** 2 / (mu ** 2 * LN2 ** 2)
    val = 0.5 * (theta / (mu * LN2) - theta / g + np.sqrt(x * x + y) - x)
    return np.maximum(val, 0.0)


# -- power subproblems ------------------------------------------------------------


@dataclass
class DtSubproblem:
    theta: np.ndarray | float
    c: np.ndarray | float
    mu: np.ndarray | float
    q_s: np.ndarray | float
    g_sd: np.ndarray | float

    def objective(self, p_s):
        return (rate_dt(p_s, self.theta, self.g_sd) - 0.5 * self.c * (p_s - self.q_s) ** 2
                - self.mu * p_s)


@dataclass
class DfSubproblem:
    theta: np.ndarray | float
    c: np.ndarray | float
    mu: np.ndarray | float
    nu: np.ndarray | float
    q_s: np.ndarray | float
    q_r: np.ndarray | float
    g_sr: np.ndarray | float
    g_sd: np.ndarray | float
    g_rd: np.ndarray | float

    def objective(self, p_s, p_r):
        return (rate_df(p_s, p_r, self.theta, self.g_sr, self.g_sd, self.g_rd)
                - 0.5 * self.c * ((p_s - self.q_s) ** 2 + (p_r - self.q_r) ** 2)
                - self.mu * p_s - self.nu * p_r)


def solve_dt_local(sub: DtSubproblem):
    """Optimal source power of a DT link subproblem."""
    return f_core(2.0 * np.asarray(sub.theta, float), sub.c, sub.mu, sub.q_s, sub.g_sd, 1.0)


def _relaxed_sd(theta, c, mu, nu, q_s, q_r, g_sd, g_rd):
    """Maximizer when only the combined (source+relay to destination) branch counts."""
    G = g_sd ** 2 + g_rd ** 2
    e = f_core(theta * G, c, g_sd * mu + g_rd * nu, g_sd * q_s + g_rd * q_r, G, 1.0)
    # stationarity gives g_rd ps - g_sd pr = (g_sd nu - g_rd mu)/c + g_rd q_s - g_sd q_r,
    # which together with g_sd ps + g_rd pr = e fixes both powers
    diff = (g_sd * nu - g_rd * mu) / c + g_rd * q_s - g_sd * q_r
    ps_in = (g_sd * e + g_rd * diff) / G
    pr_in = (g_rd * e - g_sd * diff) / G
    inside = (ps_in >= 0) & (pr_in >= 0)

    def relaxed(ps, pr):
        r1 = 0.5 * theta * np.log1p(2.0 * (ps * g_sd + pr * g_rd) / theta) / LN2
        return r1 - 0.5 * c * ((ps - q_s) ** 2 + (pr - q_r) ** 2) - mu * ps - nu * pr

    faces = [
        (f_core(theta, c, mu, q_s, g_sd, 1.0), np.zeros_like(e)),
        (np.zeros_like(e), f_core(theta, c, nu, q_r, g_rd, 1.0)),
    ]
    best_ps = np.where(inside, np.maximum(ps_in, 0.0), 0.0)
    best_pr = np.where(inside, np.maximum(pr_in, 0.0), 0.0)
    best_val = np.where(inside, relaxed(best_ps, best_pr), -np.inf)
    for ps, pr in faces:
        val = relaxed(ps, pr)
        better = val > best_val
        best_ps = np.where(better, ps, best_ps)
        best_pr = np.where(better, pr, best_pr)
        best_val = np.where(better, val, best_val)
    return best_ps, best_pr


def solve_df_local(sub: DfSubproblem, return_case: bool = False):
    """Optimal ``(p_s, p_r)`` of a DF link subproblem (requires ``c > 0``).

    The DF rate is the minimum of two concave branches, so the optimum is
    either the maximizer with only the source-relay branch kept (valid when
    it lands where that branch is the smaller one), the maximizer with only
    the combined branch kept (likewise), or the maximizer restricted to the
    kink line ``g_rd p_r = (g_sr - g_sd) p_s``.  All three are computed in
    closed form and the region-consistent one is returned; near the kink the
    candidates are compared by objective value.
    """
    arrs = np.broadcast_arrays(*(np.asarray(getattr(sub, k), float) for k in
                                 ("theta", "c", "mu", "nu", "q_s", "q_r",
                                  "g_sr", "g_sd", "g_rd")))
    theta, c, mu, nu, q_s, q_r, g_sr, g_sd, g_rd = arrs
    if np.any(c <= 0):
        raise ValueError("solve_df_local needs c > 0; use solve_df_unregularized for c = 0")
    slope = (g_sr - g_sd) / g_rd

    ps1 = f_core(theta, c, mu, q_s, g_sr, 1.0)
    pr1 = np.maximum(q_r - nu / c, 0.0)
    ps2, pr2 = _relaxed_sd(theta, c, mu, nu, q_s, q_r, g_sd, g_rd)
    v = 1.0 + slope ** 2
    ps3 = f_core(theta, c, mu + slope * nu, q_s + slope * q_r, g_sr, v)
    pr3 = slope * ps3

    def gap(ps, pr):
        scale = 1.0 + np.abs(g_rd * pr) + np.abs((g_sr - g_sd) * ps)
        return (g_rd * pr - (g_sr - g_sd) * ps) / scale

    gap1, gap2 = gap(ps1, pr1), gap(ps2, pr2)
    obj = DfSubproblem(theta, c, mu, nu, q_s, q_r, g_sr, g_sd, g_rd).objective
    j1 = np.where(gap1 >= -REGION_TOL, obj(ps1, pr1), -np.inf)
    j2 = np.where(gap2 <= REGION_TOL, obj(ps2, pr2), -np.inf)
    j3 = obj(ps3, pr3)

    case = np.full(theta.shape, CASE_BALANCED)
    ambiguous = ~((gap1 > REGION_TOL) | (gap2 < -REGION_TOL))
    case = np.where(ambiguous & (j1 >= j3) & (j1 >= j2), CASE_SR_LIMITED, case)
    case = np.where(ambiguous & (j2 > j3) & (j2 > j1), CASE_SD_LIMITED, case)
    case = np.where(gap2 < -REGION_TOL, CASE_SD_LIMITED, case)
    case = np.where(gap1 > REGION_TOL, CASE_SR_LIMITED, case)

    ps = np.select([case == 1, case == 2], [ps1, ps2], ps3)
    pr = np.select([case == 1, case == 2], [pr1, pr2], pr3)
    if ps.ndim == 0:
        ps, pr, case = float(ps), float(pr), int(case)
    return (ps, pr, case) if return_case else (ps, pr)


# -- KKT residuals ----------------------------------------------------------------


def _kkt_component(grad, p):
    """Stationarity residual of one coordinate constrained to ``p >= 0``."""
    return np.where(p > 0, np.abs(grad), np.maximum(grad, 0.0))


def dt_kkt_residual(sub: DtSubproblem, p_s):
    grad = dt_derivative(p_s, sub.theta, sub.g_sd) - sub.mu - sub.c * (p_s - sub.q_s)
    return _kkt_component(grad, p_s)


def _df_kkt_parts(sub: DfSubproblem, p_s, p_r):
    w1 = 1.0 / (LN2 * (1.0 + 2.0 * (p_s * sub.g_sd + p_r * sub.g_rd) / sub.theta))
    w2 = 1.0 / (LN2 * (1.0 + 2.0 * p_s * sub.g_sr / sub.theta))
    base_s = -sub.mu - sub.c * (p_s - sub.q_s)
    base_r = -sub.nu - sub.c * (p_r - sub.q_r)
    return sub.g_sd * w1, sub.g_rd * w1, sub.g_sr * w2, base_s, base_r


def df_kink_weight(sub: DfSubproblem, p_s: float, p_r: float) -> float:
    """Weight ``tau`` on the combined branch that best satisfies stationarity.

    On the kink the subdifferential of the DF rate is the segment between the
    two branch gradients; this picks the point of that segment that makes
    the subproblem's KKT conditions hold (exactly, at an optimum).
    """
    d1s, d1r, d2s, bs, br = (float(x) for x in _df_kkt_parts(sub, p_s, p_r))

    def resid(tau):
        gs = tau * d1s + (1 - tau) * d2s + bs
        gr = tau * d1r + br
        rs = abs(gs) if p_s > 0 else max(gs, 0.0)
        rr = abs(gr) if p_r > 0 else max(gr, 0.0)
        return rs * rs + rr * rr

    if p_r > 0 and d1r > 0:
        tau = min(max(-br / d1r, 0.0), 1.0)
        if resid(tau) == 0.0:
            return tau
    res = minimize_scalar(resid, bounds=(0.0, 1.0), method="bounded",
                          options={"xatol": 1e-13})
    return float(res.x)


def df_kkt_residual(sub: DfSubproblem, p_s: float, p_r: float) -> float:
    """Max-norm KKT residual of a (scalar) DF subproblem solution."""
    d1s, d1r, d2s, bs, br = (float(x) for x in _df_kkt_parts(sub, p_s, p_r))
    r1, r2 = df_branches(p_s, p_r, sub.theta, sub.g_sr, sub.g_sd, sub.g_rd)
    scale = 1.0 + abs(float(r1)) + abs(float(r2))
    if abs(float(r1 - r2)) <= 1e-10 * scale:
        tau = df_kink_weight(sub, p_s, p_r)
    else:
        tau = 1.0 if r1 < r2 else 0.0
    gs = tau * d1s + (1 - tau) * d2s + bs
    gr = tau * d1r + br
    return float(max(_kkt_component(gs, p_s), _kkt_component(gr, p_r)))


# -- unregularized (c = 0) solvers, diagnostic only ---------------------------------


def solve_dt_unregularized(theta, mu, g_sd, p_cap):
    """Plain water-filling on ``[0, p_cap]``; ``mu = 0`` gives ``p_cap``."""
    with np.errstate(divide="ignore"):
        level = np.where(np.asarray(mu) > 0, theta / (LN2 * np.asarray(mu, float)), np.inf)
    return np.clip(level - theta / g_sd, 0.0, p_cap)


def solve_df_unregularized(theta, mu, nu, g_sr, g_sd, g_rd, ps_cap, pr_cap):
    """One maximizer of the DF subproblem with ``c = 0`` on a power box.

    Without the proximal terms the maximizer is generally a set; the
    largest relay power in that set is returned.  Scalars only.
    """
    slope = (g_sr - g_sd) / g_rd

    def best_pr(ps):
        if nu <= 0:
            return pr_cap
        e_star = 0.5 * theta * (g_rd / (nu * LN2) - 1.0)
        return min(max((e_star - g_sd * ps) / g_rd, 0.0), slope * ps, pr_cap)

    def neg(ps):
        pr = best_pr(ps)
        return -(float(rate_df(ps, pr, theta, g_sr, g_sd, g_rd)) - mu * ps - nu * pr)

    res = minimize_scalar(neg, bounds=(0.0, ps_cap), method="bounded",
                          options={"xatol": 1e-12})
    ps = float(res.x)
    for edge in (0.0, ps_cap):
        if neg(edge) <= neg(ps):
            ps = edge
    return ps, best_pr(ps)


# -- channel subproblem -----------------------------------------------------------


def rate_root_lhs(u):
    """``log2(1 + u) - u / (ln2 (1 + u))``, the theta-derivative of a rate.

    Uses a series for small ``u`` where the two terms nearly cancel.
    """
    u = np.asarray(u, float)
    small = u < 1e-3
    us = np.where(small, u, 0.0)
    series = us * us * (0.5 - us * (2.0 / 3.0 - us * (0.75 - us * 0.8)))
    ul = np.where(small, 1.0, u)
    direct = np.log1p(ul) - ul / (1.0 + ul)
    out = np.where(small, series, direct) / LN2
    return out if out.ndim else float(out)


def _lhs_derivative(u: float) -> float:
    return u / (LN2 * (1.0 + u) ** 2)


def invert_rate_root(b: float, u0: float | None = None, tol: float = 1e-13,
                     max_iter: int = 60) -> tuple[float, int]:
    """Solve ``rate_root_lhs(u) = b`` for ``u > 0``; returns ``(u, iterations)``.

    Safeguarded Newton in ``log u`` inside the bracket
    ``[sqrt(2 ln2 b), 2**(b + 1/ln2) - 1]``.
    """
    if not b > 0:
        raise ValueError("rate root needs b > 0 (no finite root otherwise)")
    lo = math.log(math.sqrt(2.0 * LN2 * b))
    hi_u = 2.0 ** (b + 1.0 / LN2) - 1.0
    hi = math.log(hi_u) if hi_u > 0 else lo + 1.0
    if u0 is None:
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
        ds = r / (_lhs_derivative(u) * u)
        s_new = s - ds
        if not lo < s_new < hi:
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= 1e-16 * max(1.0, abs(s)):
            return math.exp(s_new), it
        s = s_new
    return math.exp(s), max_iter


def solve_rate_root(a: float, b: float, return_iterations: bool = False):
    """Root ``x > 0`` of ``log2(1 + a/x) - (a/x) / (ln2 (1 + a/x)) = b``.

    The left side depends on ``a / x`` only and increases in it, so the
    equation is solved for ``u = a / x`` and ``x = a / u`` returned.
    """
    if not a > 0:
        raise ValueError("rate root needs a > 0")
    u, it = invert_rate_root(b)
    return (a / u, it) if return_iterations else a / u


def channel_a_values(scenario, allocation_or_powers):
    """Effective SNR numerators ``a`` and ``b``-multipliers for every link.

    DT: ``a = g_sd ps``, ``b = omega``.  DF: ``a = 2 min(g_sr ps, g_sd ps +
    g_rd pr)``, ``b = 2 omega``.  Returns ``(a_dt, a_df)``; the multipliers
    are 1 and 2 by link type.
    """
    lk = scenario.links
    p = allocation_or_powers
    if hasattr(p, "ps_dt"):
        ps_dt, ps_df, pr_df = p.ps_dt, p.ps_df, p.pr_df
    else:
        p = np.asarray(p, float)
        ps_dt, ps_df, pr_df = p[:lk.n_dt], p[lk.n_dt:lk.n_dt + lk.n_df], p[lk.n_dt + lk.n_df:]
    a_dt = lk.g_sd_dt * ps_dt
    a_df = 2.0 * np.minimum(lk.g_sr * ps_df, lk.g_sd_df * ps_df + lk.g_rd * pr_df)
    return a_dt, a_df


@dataclass
class ChannelSubproblem:
    """One control node: ``a`` values of its DT and DF links and its budget."""

    a_dt: np.ndarray
    a_df: np.ndarray
    beta: float
    theta_min: float


@dataclass
class ChannelSolution:
    theta_dt: np.ndarray
    theta_df: np.ndarray
    omega: float
    iterations: int  # outer (multiplier) iterations
    root_iterations: int  # largest inner Newton count for a rate root


def _shares(a_dt, a_df, u1, u2, theta_min):
    return (np.maximum(a_dt / u1, theta_min) if a_dt.size else a_dt,
            np.maximum(a_df / u2, theta_min) if a_df.size else a_df)


def solve_channel_subproblem(sub: ChannelSubproblem, u_hint: float | None = None,
                             tol: float = 1e-13, max_iter: int = 200) -> ChannelSolution:
    """Optimal channel shares of one control node and the budget multiplier ``omega``.

    Each link's share is ``max(theta_min, a / u)`` where ``u`` solves the
    rate-root equation with ``b = omega`` (DT) or ``2 omega`` (DF).  DT links
    therefore share one ``u1`` and DF links one ``u2``, linked through
    ``lhs(u2) = 2 lhs(u1)``.  The multiplier is found by a safeguarded
    Newton/bisection search on ``log u1`` until the budget holds with equality.
    """
    a_dt = np.asarray(sub.a_dt, float)
    a_df = np.asarray(sub.a_df, float)
    tmin, beta = float(sub.theta_min), float(sub.beta)
    n = a_dt.size + a_df.size
    if beta < n * tmin * (1 - 1e-12):
        raise ValueError(f"infeasible channel budget {beta:g} < {n} x {tmin:g}")
    if np.any(a_dt < 0) or np.any(a_df < 0):
        raise ValueError("negative SNR numerator")
    floor_dt, floor_df = np.full(a_dt.size, tmin), np.full(a_df.size, tmin)
    if n == 0 or (not np.any(a_dt > 0) and not np.any(a_df > 0)):
        return ChannelSolution(floor_dt, floor_df, 0.0, 0, 0)
    if beta <= n * tmin * (1 + 1e-12):
        # every link sits on the floor; smallest multiplier that keeps it there
        omega = max([float(rate_root_lhs(a / tmin)) for a in a_dt if a > 0]
                    + [0.5 * float(rate_root_lhs(a / tmin)) for a in a_df if a > 0])
        return ChannelSolution(floor_dt, floor_df, omega, 0, 0)

    state = {"u2": None, "root_it": 0}

    def u2_of(u1):
        if not a_df.size:
            return 1.0
        u2, it = invert_rate_root(2.0 * rate_root_lhs(u1), u0=state["u2"])
        state["u2"] = u2
        state["root_it"] = max(state["root_it"], it)
        return u2

    def F(s):
        u1 = math.exp(s)
        u2 = u2_of(u1)
        t_dt, t_df = _shares(a_dt, a_df, u1, u2, tmin)
        val = t_dt.sum() + t_df.sum() - beta
        # d/ds of the active shares
        dlog_u2 = 2.0 * _lhs_derivative(u1) * u1 / (_lhs_derivative(u2) * u2) if a_df.size else 0.0
        act_dt, act_df = a_dt / u1 > tmin, a_df / u2 > tmin
        deriv = -(a_dt[act_dt] / u1).sum() - (a_df[act_df] / u2).sum() * dlog_u2
        return val, deriv

    a_max = max(a_dt.max(initial=0.0), a_df.max(initial=0.0))
    s = math.log(u_hint) if u_hint else math.log(max(a_max * n / beta, 1e-300))
    # bracket the root of the decreasing function F, then safeguarded Newton
    lo, hi = -math.inf, math.inf
    step, it = 1.0, 0
    for it in range(1, max_iter + 1):
        f, d = F(s)
        if f > 0:
            lo = s
        else:
            hi = s
        if abs(f) <= tol * max(beta, 1.0) or hi - lo <= 1e-15 * max(1.0, abs(s)):
            break
        if math.isinf(lo) or math.isinf(hi):
            s_new = s - f / d if d < 0 else s
            # never trust an unbracketed Newton step further than the expansion step
            s_new = min(max(s_new, s - step), s + step)
            if s_new == s:
                s_new = s + step if f > 0 else s - step
            step *= 2.0
        else:
            s_new = s - f / d if d < 0 else 0.5 * (lo + hi)
            if not lo < s_new < hi:
                s_new = 0.5 * (lo + hi)
        s = s_new
    u1 = math.exp(s)
    u2 = u2_of(u1)
    t_dt, t_df = _shares(a_dt, a_df, u1, u2, tmin)
    # remove the last rounding-level budget residual from the unfloored links
    free_dt, free_df = t_dt > tmin, t_df > tmin
    free_sum = t_dt[free_dt].sum() + t_df[free_df].sum()
    if free_sum > 0:
        scale = (beta - tmin * (n - free_dt.sum() - free_df.sum())) / free_sum
        t_dt = np.where(free_dt, t_dt * scale, t_dt)
        t_df = np.where(free_df, t_df * scale, t_df)
    return ChannelSolution(t_dt, t_df, float(rate_root_lhs(u1)), it, state["root_it"])


def channel_kkt_residual(sub: ChannelSubproblem, sol: ChannelSolution) -> float:
    """Max KKT residual of a channel solution (stationarity, floor, budget)."""
    res = [abs(sol.theta_dt.sum() + sol.theta_df.sum() - sub.beta)]
    for a, t, mult in ((sub.a_dt, sol.theta_dt, 1.0), (sub.a_df, sol.theta_df, 0.5)):
        for ai, ti in zip(np.asarray(a, float), t):
            grad = mult * float(rate_root_lhs(ai / ti)) - sol.omega
            res.append(abs(grad) if ti > sub.theta_min * (1 + 1e-12) else max(grad, 0.0))
            res.append(max(sub.theta_min - ti, 0.0))
    return float(max(res))
