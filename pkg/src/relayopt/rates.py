"""Spectral efficiency of direct (DT) and decode-and-forward (DF) links.

All rates are in bits/s/Hz.  Gains are normalized SNRs per unit power
(``|h|^2 / (N0 W)``), so noise and bandwidth never appear explicitly.
Every function accepts scalars or broadcastable numpy arrays.
"""

from __future__ import annotations

import numpy as np

LN2 = np.log(2.0)

__all__ = [
    "LN2",
    "rate_dt",
    "rate_df",
    "df_branches",
    "dt_derivative",
    "df_subgradient",
    "objective",
    "link_rates",
]


def _check_theta(theta):
    if np.any(np.asarray(theta) <= 0):
        raise ValueError("channel share theta must be strictly positive")


def rate_dt(p_s, theta, g_sd):
    """Rate of a direct link, ``theta * log2(1 + p_s g_sd / theta)``."""
    _check_theta(theta)
    return theta * np.log1p(np.multiply(p_s, g_sd) / theta) / LN2


def df_branches(p_s, p_r, theta, g_sr, g_sd, g_rd):
    """Return the two DF branch rates ``(R1, R2)``.

    ``R1`` is the combined source+relay to destination branch and ``R2`` the
    source to relay branch; the DF rate is their minimum.
    """
    _check_theta(theta)
    r1 = 0.5 * theta * np.log1p(2.0 * (p_s * g_sd + p_r * g_rd) / theta) / LN2
    r2 = 0.5 * theta * np.log1p(2.0 * p_s * g_sr / theta) / LN2
    return r1, r2


def rate_df(p_s, p_r, theta, g_sr, g_sd, g_rd):
    """Rate of a DF relay link (two half-duplex phases)."""
    r1, r2 = df_branches(p_s, p_r, theta, g_sr, g_sd, g_rd)
    return np.minimum(r1, r2)


def dt_derivative(p_s, theta, g_sd):
    """Derivative of :func:`rate_dt` with respect to ``p_s``."""
    return g_sd / (LN2 * (1.0 + p_s * g_sd / theta))


def df_subgradient(p_s, p_r, theta, g_sr, g_sd, g_rd, tau=0.5, kink_tol=1e-9):
    """Subgradient of :func:`rate_df` with respect to ``(p_s, p_r)``.

    Off the kink this is the gradient of the active branch.  On the kink
    (``g_rd p_r == (g_sr - g_sd) p_s`` within ``kink_tol``) the element
    ``tau * grad(R1) + (1 - tau) * grad(R2)`` is returned; the midpoint is
    the default.  Use :func:`relayopt.local_solvers.df_kink_weight` to get
    the weight consistent with a subproblem's stationarity conditions.
    """
    _check_theta(theta)
    p_s, p_r = np.asarray(p_s, float), np.asarray(p_r, float)
    w1 = 1.0 / (LN2 * (1.0 + 2.0 * (p_s * g_sd + p_r * g_rd) / theta))
    w2 = 1.0 / (LN2 * (1.0 + 2.0 * p_s * g_sr / theta))
    d1s, d1r = g_sd * w1, g_rd * w1
    d2s, d2r = g_sr * w2, 0.0 * w2
    gap = g_rd * p_r - (g_sr - g_sd) * p_s
    scale = 1.0 + np.abs(g_rd * p_r) + np.abs((g_sr - g_sd) * p_s)
    on_kink = np.abs(gap) <= kink_tol * scale
    # gap > 0 means R1 > R2: the source-relay branch is active
    t = np.where(on_kink, tau, np.where(gap > 0, 0.0, 1.0))
    return t * d1s + (1 - t) * d2s, t * d1r + (1 - t) * d2r


def link_rates(scenario, allocation):
    """Per-link rates ``(dt_rates[M], df_rates[L])`` of an allocation."""
    lk = scenario.links
    allocation.check_shape(scenario)
    dt = rate_dt(allocation.ps_dt, allocation.theta_dt, lk.g_sd_dt)
    df = rate_df(allocation.ps_df, allocation.pr_df, allocation.theta_df,
                 lk.g_sr, lk.g_sd_df, lk.g_rd)
    return np.asarray(dt, float), np.asarray(df, float)


def objective(scenario, allocation):
    """Total spectral efficiency at ``allocation``."""
    dt, df = link_rates(scenario, allocation)
    return float(np.sum(dt) + np.sum(df))
