"""Distributed primal-dual protocol for joint power and channel allocation.

One iteration of the synchronous protocol is

1. every link solves its proximal power subproblem at the current duals
   and proximal centers (``step_power``);
2. every source and relay updates its power price (``step_dual``);
3. every link re-solves its subproblem at the new prices, which becomes the
   new proximal center (``step_auxiliary``);
4. every ``K`` iterations each control node re-splits its channel budget
   given the new centers (``step_channel``).

The power vector is ordered ``[ps_dt (M), ps_df (L), pr_df (L)]`` and the
dual vector ``[mu (N sources), nu (J relays)]``, matching ``LinkTable.E``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from . import _kernels
from .local_solvers import (
    channel_a_values,
    solve_df_unregularized,
    solve_dt_unregularized,
)
from .rates import objective
from .scenario import Allocation, NetworkScenario, compute_s_bound

log = logging.getLogger(__name__)

__all__ = [
    "AlgoParams",
    "ProtocolState",
    "Trace",
    "RunResult",
    "StepSizeReport",
    "StationarityReport",
    "initial_state",
    "step_power",
    "step_dual",
    "step_auxiliary",
    "step_channel",
    "validate_step_sizes",
    "run_algorithm_a",
    "check_stationary",
]


@dataclass
class AlgoParams:
    """Parameters of the distributed protocol.

    Parameters
    ----------
    c : float or array
        Proximal weight; a scalar or one value per link (``M + L`` values,
        DT links first).  ``c = 0`` is only accepted together with
        ``allow_zero_c=True`` and selects plain (unregularized) dual
        decomposition, kept as a diagnostic.
    alpha : float or array
        Dual step size; a scalar or one value per dual row (``N + J``).
    K : int
        Channel update period.
    theta_min : float, optional
        Overrides the scenario's channel floor when given.
    max_iters : int
        Iteration cap (outer iterations in classic proximal mode).
    stop_tol : float
        Tolerance of the stopping test.
    stop_rule : {"scaled", "relative"}
        How price changes enter the stopping test; see
        :func:`run_algorithm_a`.
    classic_proximal : bool
        Baseline mode: the proximal center only moves once an inner dual
        loop has settled to ``inner_tol`` relative change.
    inner_tol, max_inner : float, int
        Inner-loop settings of the classic mode.
    trace_every : int
        Keep every ``trace_every``-th iteration in the trace (the last one
        is always kept).
    dump_states : bool
        Record a full state snapshot at every channel step.
    """

    c: Any = 1e-4
    alpha: Any = 5e-5
    K: int = 2
    theta_min: float | None = None
    max_iters: int = 50_000
    stop_tol: float = 1e-3
    classic_proximal: bool = False
    inner_tol: float = 0.01
    max_inner: int = 100_000
    trace_every: int = 1
    dump_states: bool = False
    allow_zero_c: bool = False
    stop_rule: str = "scaled"

    def __post_init__(self):
        c = np.asarray(self.c, float)
        alpha = np.asarray(self.alpha, float)
        if np.any(c < 0) or (np.any(c == 0) and not self.allow_zero_c):
            raise ValueError("c must be positive (c = 0 needs allow_zero_c=True)")
        if self.allow_zero_c and np.any(c > 0) and np.any(c == 0):
            raise ValueError("c = 0 diagnostic mode needs c = 0 on every link")
        if np.any(alpha <= 0):
            raise ValueError("alpha must be positive")
        if int(self.K) < 1:
            raise ValueError("K must be at least 1")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if self.stop_rule not in ("scaled", "relative"):
            raise ValueError(f"unknown stop_rule {self.stop_rule!r}")
        if self.theta_min is not None and not self.theta_min > 0:
            raise ValueError("theta_min must be positive")
        self.K = int(self.K)
        self.max_iters = int(self.max_iters)
        self.trace_every = max(int(self.trace_every), 1)

    @property
    def unregularized(self) -> bool:
        return bool(np.all(np.asarray(self.c, float) == 0))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | None, **overrides) -> "AlgoParams":
        """Build from a scenario ``params`` mapping; unknown keys are ignored."""
        names = set(cls.__dataclass_fields__)
        kw = {k: v for k, v in dict(d or {}).items() if k in names}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def link_c(self, scenario: NetworkScenario) -> tuple[np.ndarray, np.ndarray]:
        """Per-link proximal weights ``(c_dt, c_df)``."""
        lk = scenario.links
        c = np.asarray(self.c, float)
        if c.ndim == 0:
            return np.full(lk.n_dt, float(c)), np.full(lk.n_df, float(c))
        if c.shape != (lk.n_dt + lk.n_df,):
            raise ValueError(f"c needs {lk.n_dt + lk.n_df} per-link values, got {c.shape}")
        return c[:lk.n_dt].copy(), c[lk.n_dt:].copy()

    def row_alpha(self, scenario: NetworkScenario) -> np.ndarray:
        """Per-row dual step sizes."""
        n_rows = scenario.links.E.shape[0]
        alpha = np.asarray(self.alpha, float)
        if alpha.ndim == 0:
            return np.full(n_rows, float(alpha))
        if alpha.shape != (n_rows,):
            raise ValueError(f"alpha needs {n_rows} per-row values, got {alpha.shape}")
        return alpha.copy()


@dataclass
class ProtocolState:
    """Everything the agents hold between rounds."""

    q: np.ndarray  # proximal centers (auxiliary powers)
    x: np.ndarray  # last power decision
    duals: np.ndarray  # [mu, nu]
    theta_dt: np.ndarray
    theta_df: np.ndarray
    omega: np.ndarray  # channel multiplier per control node
    k: int = 0
    u_hint: list = field(default_factory=list)

    def copy(self) -> "ProtocolState":
        return ProtocolState(self.q.copy(), self.x.copy(), self.duals.copy(),
                             self.theta_dt.copy(), self.theta_df.copy(),
                             self.omega.copy(), self.k, list(self.u_hint))

    def allocation(self, n_dt: int) -> Allocation:
        """Allocation ``(Q, theta)`` reported by the protocol."""
        return Allocation.from_vectors(self.q, np.concatenate([self.theta_dt, self.theta_df]),
                                       n_dt)

    def to_dict(self) -> dict:
        return {"k": self.k, "q": self.q.tolist(), "x": self.x.tolist(),
                "duals": self.duals.tolist(), "theta_dt": self.theta_dt.tolist(),
                "theta_df": self.theta_df.tolist(), "omega": self.omega.tolist()}


class _Net:
    """Scenario arrays laid out for the vectorized protocol."""

    def __init__(self, scenario: NetworkScenario, params: AlgoParams):
        sc = scenario
        if params.theta_min is not None and params.theta_min != sc.theta_min:
            sc = sc.replace(theta_min=float(params.theta_min))
        self.scenario = sc
        lk = sc.links
        self.lk = lk
        self.M, self.L, self.N = lk.n_dt, lk.n_df, lk.n_nodes
        self.E = lk.E
        self.p_max = sc.p_max
        self.c_dt, self.c_df = params.link_c(sc)
        self.alpha = params.row_alpha(sc)
        self.mu_dt_idx = lk.dt_src
        self.mu_df_idx = lk.df_src
        self.nu_df_idx = self.N + lk.df_relay
        self.members = [lk.control_members(t) for t in range(lk.n_controls)]
        self.unregularized = params.unregularized
        self.row_of = np.concatenate([lk.dt_src, lk.df_src, self.N + lk.df_relay]).astype(np.int64)

    def powers(self, q: np.ndarray, duals: np.ndarray, theta_dt, theta_df) -> np.ndarray:
        if self.unregularized:
            return self._powers_c0(duals, theta_dt, theta_df)
        lk = self.lk
        out = np.empty(self.M + 2 * self.L)
        _kernels.link_powers(q, duals, theta_dt, theta_df, self.c_dt, self.c_df,
                             self.mu_dt_idx, self.mu_df_idx, self.nu_df_idx,
                             lk.g_sd_dt, lk.g_sr, lk.g_sd_df, lk.g_rd, out)
        return out

    def dual_step(self, duals: np.ndarray, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(duals)
        _kernels.dual_update(duals, x, self.alpha, self.row_of, self.p_max, out)
        return out

    def _powers_c0(self, duals, theta_dt, theta_df) -> np.ndarray:
        M, L, lk, sc = self.M, self.L, self.lk, self.scenario
        out = np.empty(M + 2 * L)
        out[:M] = solve_dt_unregularized(theta_dt, duals[self.mu_dt_idx], lk.g_sd_dt,
                                         sc.p_s_max[lk.dt_src])
        for i in range(L):
            ps, pr = solve_df_unregularized(
                float(theta_df[i]), float(duals[self.mu_df_idx[i]]),
                float(duals[self.nu_df_idx[i]]), float(lk.g_sr[i]), float(lk.g_sd_df[i]),
                float(lk.g_rd[i]), float(sc.p_s_max[lk.df_src[i]]),
                float(sc.p_r_max[lk.df_relay[i]]))
            out[M + i], out[M + L + i] = ps, pr
        return out

    def channel(self, q: np.ndarray, beta, u_hint):
        sc, lk = self.scenario, self.lk
        a_dt, a_df = channel_a_values(sc, q)
        theta_dt = np.empty(self.M)
        theta_df = np.empty(self.L)
        omega = np.zeros(lk.n_controls)
        hints = list(u_hint) if u_hint else [None] * lk.n_controls
        for t, (i_dt, i_df) in enumerate(self.members):
            t_dt, t_df = np.empty(len(i_dt)), np.empty(len(i_df))
            omega[t], u1 = _kernels.channel_node(
                a_dt[i_dt], a_df[i_df], float(beta[t]), sc.theta_min,
                hints[t] or -1.0, 1e-13, 200, t_dt, t_df)
            theta_dt[i_dt] = t_dt
            theta_df[i_df] = t_df
            if u1 > 0:
                hints[t] = u1
        return theta_dt, theta_df, omega, hints


# -- state and single steps -------------------------------------------------------


def initial_state(scenario: NetworkScenario, params: AlgoParams | None = None) -> ProtocolState:
    """Cold start: zero powers and prices, equal channel split over the floor."""
    params = params or AlgoParams()
    net = _Net(scenario, params)
    lk = net.lk
    theta_dt, theta_df = net.scenario.equal_split_theta()
    n_p = lk.n_dt + 2 * lk.n_df
    return ProtocolState(np.zeros(n_p), np.zeros(n_p), np.zeros(lk.E.shape[0]),
                         np.array(theta_dt, float), np.array(theta_df, float),
                         np.zeros(lk.n_controls), 0, [None] * lk.n_controls)


def step_power(state: ProtocolState, scenario: NetworkScenario, params: AlgoParams,
               _net: _Net | None = None) -> np.ndarray:
    """Every link's power decision at the current prices and centers."""
    net = _net or _Net(scenario, params)
    return net.powers(state.q, state.duals, state.theta_dt, state.theta_df)


def step_dual(state: ProtocolState, x: np.ndarray, scenario: NetworkScenario,
              params: AlgoParams, _net: _Net | None = None) -> np.ndarray:
    """Projected price update ``[lambda + alpha (E x - P_max)]^+``."""
    net = _net or _Net(scenario, params)
    return net.dual_step(state.duals, x)


def step_auxiliary(state: ProtocolState, duals: np.ndarray, scenario: NetworkScenario,
                   params: AlgoParams, _net: _Net | None = None) -> np.ndarray:
    """New proximal centers: the link decisions re-solved at the new prices."""
    net = _net or _Net(scenario, params)
    return net.powers(state.q, duals, state.theta_dt, state.theta_df)


def step_channel(state: ProtocolState, scenario: NetworkScenario, params: AlgoParams | None = None,
                 _net: _Net | None = None):
    """Per-control-node channel split at the centers ``state.q``.

    Returns ``(theta_dt, theta_df, omega, u_hints)``.
    """
    net = _net or _Net(scenario, params or AlgoParams())
    return net.channel(state.q, net.scenario.beta, state.u_hint)


# -- step-size validation ---------------------------------------------------------


@dataclass
class StepSizeReport:
    s_bound: int
    bound: float
    alpha_max: float
    margin: float  # bound - alpha_max; negative when the sufficient condition fails

    @property
    def ok(self) -> bool:
        return self.margin >= 0

    def message(self) -> str:
        verdict = "within" if self.ok else "exceeds"
        return (f"alpha_max={self.alpha_max:g} {verdict} the sufficient bound "
                f"min(c)/(2S)={self.bound:g} (S={self.s_bound}, margin={self.margin:g})")


def validate_step_sizes(params: AlgoParams, scenario: NetworkScenario,
                        warn: bool = True) -> StepSizeReport:
    """Check ``max alpha <= min c / (2 S)``.

    The condition is sufficient, not necessary, so a violation only warns
    (or does nothing with ``warn=False``).
    """
    S = compute_s_bound(scenario)
    c_dt, c_df = params.link_c(scenario)
    c_min = float(np.concatenate([c_dt, c_df]).min(initial=np.inf))
    bound = c_min / (2.0 * S) if S > 0 else math.inf
    alpha_max = float(np.max(params.row_alpha(scenario)))
    report = StepSizeReport(S, bound, alpha_max, bound - alpha_max)
    if warn and not report.ok:
        warnings.warn(report.message(), RuntimeWarning, stacklevel=2)
    return report


# -- trace ------------------------------------------------------------------------


@dataclass
class Trace:
    """Per-iteration history of a protocol run (append-only)."""

    node_ids: tuple
    relay_ids: tuple
    k: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    dual_change: list = field(default_factory=list)  # |lambda(k+1) - lambda(k)|
    dual_residual: list = field(default_factory=list)  # step-normalized, see run_algorithm_a
    aux_change: list = field(default_factory=list)  # relative change of the centers
    max_power_residual: list = field(default_factory=list)
    duals: list = field(default_factory=list)
    powers: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def append(self, k, obj, dual_change, dual_residual, aux_change, residual, duals, powers):
        self.k.append(k)
        self.objective.append(obj)
        self.dual_change.append(dual_change)
        self.dual_residual.append(dual_residual)
        self.aux_change.append(aux_change)
        self.max_power_residual.append(residual)
        self.duals.append(duals.copy())
        self.powers.append(powers.copy())

    def __len__(self) -> int:
        return len(self.k)

    def power_array(self) -> np.ndarray:
        return np.array(self.powers)

    def dual_array(self) -> np.ndarray:
        return np.array(self.duals)

    def header(self) -> list[str]:
        return (["k", "objective", "dual_change", "max_power_residual"]
                + [f"mu_{i}" for i in self.node_ids] + [f"nu_{j}" for j in self.relay_ids])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for i in range(len(self.k)):
                w.writerow([self.k[i], repr(float(self.objective[i])),
                            repr(float(self.dual_change[i])),
                            repr(float(self.max_power_residual[i]))]
                           + [repr(float(v)) for v in self.duals[i]])

    def write_state_dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.states, fh)


# -- the protocol -----------------------------------------------------------------


@dataclass
class RunResult:
    allocation: Allocation
    state: ProtocolState
    trace: Trace
    converged: bool
    iterations: int
    local_solves: int  # link subproblem solves, summed over links
    elapsed: float

    @property
    def objective(self) -> float:
        return self.trace.objective[-1]

    @property
    def omega(self) -> np.ndarray:
        return self.state.omega


def _rel_change(new, old) -> float:
    return float(np.linalg.norm(new - old)) / max(1.0, float(np.linalg.norm(old)))


def run_algorithm_a(scenario: NetworkScenario, params: AlgoParams | None = None,
                    state: ProtocolState | None = None) -> RunResult:
    """Run the protocol until the dual and auxiliary changes are small.

    The test is applied right after a channel step and needs both

    * dual residual ``|(lambda(k+1) - lambda(k)) / alpha| / max(1, |P_max|)
      <= stop_tol`` (``stop_rule="scaled"``, the default), and
    * ``|Q(k+1) - Q(k)| <= stop_tol max(1, |Q(k)|)``.

    Dividing the price change by the step size turns it into the projected
    power-constraint violation, which does not shrink just because
    ``alpha`` is small.  ``stop_rule="relative"`` uses the unscaled
    ``|lambda(k+1) - lambda(k)| <= stop_tol max(1, |lambda(k)|)`` instead.
    After ``max_iters`` iterations the last iterate is returned with
    ``converged=False``.
    """
    params = params or AlgoParams()
    net = _Net(scenario, params)
    sc = net.scenario
    st = state.copy() if state is not None else initial_state(sc, params)
    if len(st.q) != net.M + 2 * net.L or len(st.duals) != net.E.shape[0]:
        raise ValueError("initial state does not match the scenario")
    trace = Trace(sc.node_ids, sc.relay_ids)
    n_links = net.M + net.L
    p_scale = max(1.0, float(np.linalg.norm(net.p_max)))
    t0 = time.perf_counter()
    converged, solves, it = False, 0, 0
    if np.any(st.q > 0):
        # channel split consistent with the starting centers and this scenario's budgets
        st.theta_dt, st.theta_df, st.omega, st.u_hint = net.channel(st.q, sc.beta, st.u_hint)

    for it in range(1, params.max_iters + 1):
        q_old, duals_old = st.q, st.duals
        if params.classic_proximal:
            x, duals, inner = _classic_inner(net, st, params)
            solves += inner * n_links
            q_new = x
        else:
            x = net.powers(st.q, st.duals, st.theta_dt, st.theta_df)
            duals = net.dual_step(st.duals, x)
            q_new = net.powers(st.q, duals, st.theta_dt, st.theta_df)
            solves += 2 * n_links
        st.x, st.duals, st.q, st.k = x, duals, q_new, st.k + 1
        channel_step = st.k % params.K == 0
        if channel_step:
            st.theta_dt, st.theta_df, st.omega, st.u_hint = net.channel(st.q, sc.beta, st.u_hint)
            if params.dump_states:
                trace.states.append(st.to_dict())
        step = duals - duals_old
        d_change = float(np.linalg.norm(step))
        if params.stop_rule == "relative":
            d_res = d_change / max(1.0, float(np.linalg.norm(duals_old)))
        else:
            d_res = float(np.linalg.norm(step / net.alpha)) / p_scale
        q_change = _rel_change(q_new, q_old)
        done = channel_step and d_res <= params.stop_tol and q_change <= params.stop_tol
        if done or it == params.max_iters or it % params.trace_every == 0:
            alloc = st.allocation(net.M)
            trace.append(st.k, objective(sc, alloc), d_change, d_res, q_change,
                         float(np.max(net.E @ st.q - net.p_max, initial=-np.inf)),
                         st.duals, st.q)
        if done:
            converged = True
            break
    elapsed = time.perf_counter() - t0
    if not converged:
        log.info("protocol stopped at max_iters=%d without meeting stop_tol=%g",
                    params.max_iters, params.stop_tol)
    return RunResult(st.allocation(net.M), st, trace, converged, it, solves, elapsed)


def _classic_inner(net: _Net, st: ProtocolState, params: AlgoParams):
    """Inner dual loop of the classic proximal method at fixed centers."""
    duals = st.duals
    x = net.powers(st.q, duals, st.theta_dt, st.theta_df)
    for n in range(1, params.max_inner + 1):
        new = net.dual_step(duals, x)
        x = net.powers(st.q, new, st.theta_dt, st.theta_df)
        settled = np.linalg.norm(new - duals) <= params.inner_tol * np.linalg.norm(duals)
        duals = new
        if settled:
            return x, duals, n + 1
    return x, duals, params.max_inner + 1


# -- stationarity check -----------------------------------------------------------


@dataclass
class StationarityReport:
    fixed_point: float  # |Q - argmax L(., Q; lambda)|_inf
    primal_feasibility: float  # max(E Q - P_max)^+ together with max(-lambda)^+
    complementary_slackness: float  # max |lambda (E Q - P_max)|

    def ok(self, tol: float) -> bool:
        return max(self.fixed_point, self.primal_feasibility,
                   self.complementary_slackness) <= tol


def check_stationary(state: ProtocolState, scenario: NetworkScenario,
                     params: AlgoParams | None = None) -> StationarityReport:
    """Residuals of the fixed-point, feasibility and slackness conditions."""
    params = params or AlgoParams()
    net = _Net(scenario, params)
    best = net.powers(state.q, state.duals, state.theta_dt, state.theta_df)
    slack = net.E @ state.q - net.p_max
    return StationarityReport(
        fixed_point=float(np.max(np.abs(best - state.q), initial=0.0)),
        primal_feasibility=float(max(np.max(slack, initial=0.0), np.max(-state.duals, initial=0.0),
                                     0.0)),
        complementary_slackness=float(np.max(np.abs(state.duals * slack), initial=0.0)),
    )
