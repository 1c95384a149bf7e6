"""Reference solvers used to certify the distributed algorithm.

``solve_centralized`` solves the joint allocation problem in one shot with an exponential-cone
solver (rates are perspectives of ``log``, i.e. negative relative entropies),
so it shares no code path with the closed-form local solvers.
``brute_force_df_local`` is a grid + coordinate refinement maximizer for one
DF subproblem.  ``solve_p1_reference`` grids the budget polytope.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .local_solvers import DtSubproblem
from .rates import LN2, df_subgradient, dt_derivative, objective
from .scenario import Allocation, NetworkScenario

log = logging.getLogger(__name__)

__all__ = [
    "OracleError",
    "OracleResult",
    "CentralizedModel",
    "solve_centralized",
    "allocation_kkt_residual",
    "brute_force_df_local",
    "golden_section_dt_local",
    "projected_gradient_channel",
    "solve_p1_reference",
    "budget_grid",
]


# interior-point tolerances well below the protocol's own accuracy
_SOLVER_OPTS = {"tol_gap_abs": 1e-12, "tol_gap_rel": 1e-12, "tol_feas": 1e-12,
                "tol_ktratio": 1e-10, "max_iter": 400}


class OracleError(RuntimeError):
    pass


@dataclass
class OracleResult:
    allocation: Allocation
    objective: float
    kkt_residual: float
    iterations: int
    duals: np.ndarray  # stacked power multipliers [mu (N), nu (J)]
    omega: np.ndarray  # channel-budget multipliers per control node
    status: str = "optimal"


class CentralizedModel:
    """The joint power and channel problem as a parametrized cvxpy problem; ``beta`` is a parameter.

    Building the model once and re-solving with different budgets avoids
    recompiling for every point of a budget grid.
    """

    def __init__(self, scenario: NetworkScenario):
        self.scenario = sc = scenario
        lk = sc.links
        M, L, N, J, T = lk.n_dt, lk.n_df, lk.n_nodes, lk.n_relays, lk.n_controls
        self.ps_dt = cp.Variable(M, nonneg=True)
        self.th_dt = cp.Variable(M)
        if L:
            self.ps_df = cp.Variable(L, nonneg=True)
            self.pr_df = cp.Variable(L, nonneg=True)
            self.th_df = cp.Variable(L)
        self.beta = cp.Parameter(T, nonneg=True)
        self.beta.value = sc.beta

        rates = [-cp.sum(cp.rel_entr(self.th_dt, self.th_dt
                                     + cp.multiply(lk.g_sd_dt, self.ps_dt))) / LN2]
        cons = [self.th_dt >= sc.theta_min]
        if L:
            t = cp.Variable(L)
            sr = cp.multiply(lk.g_sr, self.ps_df)
            comb = cp.multiply(lk.g_sd_df, self.ps_df) + cp.multiply(lk.g_rd, self.pr_df)
            cons += [
                self.th_df >= sc.theta_min,
                t <= -cp.rel_entr(self.th_df, self.th_df + 2 * sr) / (2 * LN2),
                t <= -cp.rel_entr(self.th_df, self.th_df + 2 * comb) / (2 * LN2),
            ]
            rates.append(cp.sum(t))
        power = cp.hstack([self.ps_dt, self.ps_df, self.pr_df]) if L else self.ps_dt
        E = lk.E if L else lk.E[:, :M]
        self.power_con = E @ power <= sc.p_max
        ctrl = np.zeros((T, M + L))
        ctrl[lk.dt_ctrl, np.arange(M)] = 1.0
        ctrl[lk.df_ctrl, M + np.arange(L)] = 1.0
        theta = cp.hstack([self.th_dt, self.th_df]) if L else self.th_dt
        self.budget_con = ctrl @ theta <= self.beta
        self.problem = cp.Problem(cp.Maximize(cp.sum(cp.hstack(rates))),
                                  cons + [self.power_con, self.budget_con])

    def solve(self, beta=None) -> OracleResult:
        sc = self.scenario
        if beta is not None:
            self.beta.value = np.asarray(beta, float)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                self.problem.solve(solver=cp.CLARABEL, **_SOLVER_OPTS)
        except cp.error.SolverError as exc:
            raise OracleError(f"centralized solve failed: {exc}") from exc
        if self.problem.status not in ("optimal", "optimal_inaccurate"):
            raise OracleError(f"centralized solve ended with status {self.problem.status}")
        lk = sc.links
        clip = lambda v, lo=0.0: np.maximum(np.asarray(v.value, float).reshape(-1), lo)  # noqa
        alloc = Allocation(
            clip(self.ps_dt), clip(self.ps_df) if lk.n_df else np.zeros(0),
            clip(self.pr_df) if lk.n_df else np.zeros(0),
            clip(self.th_dt, sc.theta_min), clip(self.th_df, sc.theta_min)
            if lk.n_df else np.zeros(0))
        _restore_feasibility(sc, alloc, np.asarray(self.beta.value, float))
        duals = np.maximum(np.asarray(self.power_con.dual_value, float), 0.0)
        omega = np.maximum(np.asarray(self.budget_con.dual_value, float), 0.0)
        stats = self.problem.solver_stats
        return OracleResult(
            allocation=alloc, objective=objective(sc, alloc),
            kkt_residual=allocation_kkt_residual(sc, alloc, duals, omega),
            iterations=int(stats.num_iters or 0), duals=duals, omega=omega,
            status=self.problem.status)


def _restore_feasibility(sc: NetworkScenario, alloc: Allocation, beta: np.ndarray):
    """Scale away solver-tolerance violations of the power and budget rows."""
    lk = sc.links
    usage = lk.E @ alloc.power_vector()
    over = np.where(usage > sc.p_max, sc.p_max / np.maximum(usage, 1e-300), 1.0)
    alloc.ps_dt *= over[lk.dt_src]
    alloc.ps_df *= over[lk.df_src]
    alloc.pr_df *= over[lk.n_nodes + lk.df_relay]
    for t in range(lk.n_controls):
        i_dt, i_df = lk.control_members(t)
        total = alloc.theta_dt[i_dt].sum() + alloc.theta_df[i_df].sum()
        if total > beta[t]:
            floor = sc.theta_min
            free = total - floor * (len(i_dt) + len(i_df))
            keep = (beta[t] - floor * (len(i_dt) + len(i_df))) / free if free > 0 else 0.0
            alloc.theta_dt[i_dt] = floor + (alloc.theta_dt[i_dt] - floor) * keep
            alloc.theta_df[i_df] = floor + (alloc.theta_df[i_df] - floor) * keep


def allocation_kkt_residual(sc: NetworkScenario, alloc: Allocation, duals, omega) -> float:
    """KKT residual of the joint problem at a primal-dual point (max-norm).

    Stationarity in powers uses the rate subgradients with the kink weight
    chosen to best fit the multipliers; stationarity in channel shares uses
    the rate derivatives in theta.  Feasibility and complementary slackness
    rows are included.
    """
    from .local_solvers import DfSubproblem, df_kink_weight, rate_root_lhs

    lk = sc.links
    duals = np.asarray(duals, float)
    omega = np.asarray(omega, float)
    mu, nu = duals[:lk.n_nodes], duals[lk.n_nodes:]
    res = []

    def comp(grad, p, floor=0.0):
        return abs(grad) if p > floor * (1 + 1e-9) + 1e-12 else max(grad, 0.0)

    for m in range(lk.n_dt):
        p, th, g = alloc.ps_dt[m], alloc.theta_dt[m], lk.g_sd_dt[m]
        res.append(comp(float(dt_derivative(p, th, g)) - mu[lk.dt_src[m]], p))
        res.append(comp(float(rate_root_lhs(g * p / th)) - omega[lk.dt_ctrl[m]],
                        th, sc.theta_min))
    for i in range(lk.n_df):
        ps, pr, th = alloc.ps_df[i], alloc.pr_df[i], alloc.theta_df[i]
        gsr, gsd, grd = lk.g_sr[i], lk.g_sd_df[i], lk.g_rd[i]
        m_s, n_r = mu[lk.df_src[i]], nu[lk.df_relay[i]]
        sub = DfSubproblem(th, 0.0, m_s, n_r, ps, pr, gsr, gsd, grd)
        tau = df_kink_weight(sub, ps, pr)
        gs, gr = df_subgradient(ps, pr, th, gsr, gsd, grd, tau=tau, kink_tol=1e-7)
        res.append(comp(float(gs) - m_s, ps))
        res.append(comp(float(gr) - n_r, pr))
        x = min(gsr * ps, gsd * ps + grd * pr)
        res.append(comp(0.5 * float(rate_root_lhs(2 * x / th)) - omega[lk.df_ctrl[i]],
                        th, sc.theta_min))
    usage = lk.E @ alloc.power_vector() - sc.p_max
    res += list(np.maximum(usage, 0.0)) + list(np.abs(duals * usage))
    return float(max(res))


def solve_centralized(scenario: NetworkScenario, tol: float = 1e-9) -> OracleResult:
    """Solve the joint power and channel problem centrally to high accuracy (desk-scale instances)."""
    result = CentralizedModel(scenario).solve()
    if result.kkt_residual > max(tol, 1e-6) * 1e3:
        log.warning("oracle KKT residual %.3g above expectation", result.kkt_residual)
    return result


def _power_bound(sub, q: float, price: float) -> float:
    """Upper bound on an optimal power: each rate derivative is <= theta/(2 ln2 p)."""
    theta, c = float(sub.theta), float(sub.c)
    prox = q / 2 + np.sqrt(q * q / 4 + theta / (2 * c * LN2)) if c > 0 else np.inf
    level = theta / (2 * price * LN2) if price > 0 else np.inf
    return 1.05 * max(q, min(prox, level)) + 1e-3


def golden_section_dt_local(sub, bounds=None, tol: float = 1e-13):
    """Maximize one DT subproblem by golden-section search.

    Scalars only; the objective is strictly concave for ``c > 0``.  Returns
    ``(p_s, objective)``; the lower end ``p_s = 0`` is checked explicitly.
    """
    obj = sub.objective
    if bounds is None:
        # a DT rate derivative is <= theta/(ln2 p): the DF bound at twice the share
        doubled = DtSubproblem(2.0 * float(sub.theta), sub.c, sub.mu, sub.q_s, sub.g_sd)
        bounds = (0.0, _power_bound(doubled, float(sub.q_s), float(sub.mu)))
    lo, hi = bounds
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    x1, x2 = b - inv * (b - a), a + inv * (b - a)
    f1, f2 = float(obj(x1)), float(obj(x2))
    while b - a > tol * max(1.0, abs(a)):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv * (b - a)
            f2 = float(obj(x2))
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv * (b - a)
            f1 = float(obj(x1))
    x = 0.5 * (a + b)
    best = float(obj(x))
    if float(obj(lo)) >= best:
        x, best = float(lo), float(obj(lo))
    return x, best


def brute_force_df_local(sub, grid: int = 200, bounds=None, refine_rounds: int = 60):
    """Maximize one DF subproblem by grid search plus coordinate refinement.

    Scalars only.  ``bounds`` is ``(ps_hi, pr_hi)``; by default the box
    extends past the proximal centers far enough to contain the optimum.
    Returns ``(p_s, p_r, objective)``.
    """
    obj = sub.objective
    if bounds is None:
        bounds = (_power_bound(sub, float(sub.q_s), float(sub.mu)),
                  _power_bound(sub, float(sub.q_r), float(sub.nu)))
    xs = np.linspace(0.0, bounds[0], grid)
    ys = np.linspace(0.0, bounds[1], grid)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    J = obj(X, Y)
    i, j = np.unravel_index(np.argmax(J), J.shape)
    x, y = xs[i], ys[j]
    hx, hy = bounds[0] / (grid - 1), bounds[1] / (grid - 1)
    best = float(J[i, j])
    # pattern search: axis and kink-line directions, shrinking steps
    slope = (float(sub.g_sr) - float(sub.g_sd)) / float(sub.g_rd)
    dirs = [(1, 0), (0, 1), (1, slope), (1, -1 / slope if slope else 0.0)]
    dirs = [np.array(d, float) / np.hypot(*d) for d in dirs]
    step = max(hx, hy)
    for _ in range(refine_rounds * 20):
        improved = False
        for d in dirs:
            for sgn in (1.0, -1.0):
                nx, ny = max(x + sgn * step * d[0], 0.0), max(y + sgn * step * d[1], 0.0)
                val = float(obj(nx, ny))
                if val > best:
                    x, y, best, improved = nx, ny, val, True
        if not improved:
            step *= 0.5
            if step < 1e-13:
                break
    return x, y, best


def budget_grid(scenario: NetworkScenario, resolution: float) -> np.ndarray:
    """Grid points of the budget polytope that no single grid step can enlarge.

    The optimal joint value never decreases when a budget grows, so only
    these maximal points can hold the best grid value.
    """
    P = scenario.polytope
    floor = scenario.min_budget()
    T = scenario.n_controls
    hi = np.empty(T)
    for t in range(T):
        rows = P.A[:, t] > 0
        hi[t] = np.min(P.b[rows] / P.A[rows, t]) if rows.any() else 1.0
    axes = [np.round(np.arange(0.0, hi[t] + 1e-12, resolution), 12) for t in range(T)]
    pts = []
    for combo in itertools.product(*axes):
        b = np.array(combo)
        if np.any(b < floor - 1e-12) or not P.contains(b):
            continue
        maximal = True
        for t in range(T):
            up = b.copy()
            up[t] += resolution
            if P.contains(up):
                maximal = False
                break
        if maximal:
            pts.append(b)
    return np.array(pts)


def solve_p1_reference(scenario: NetworkScenario, beta_grid_resolution: float = 0.02):
    """Best budget vector on a grid over the polytope, with the joint problem solved at each point.

    Returns ``(beta, objective, OracleResult)``.
    """
    if scenario.n_controls > 3:
        raise ValueError("grid reference is limited to three control nodes")
    pts = budget_grid(scenario, beta_grid_resolution)
    if not len(pts):
        raise OracleError("no feasible budget on the grid")
    model = CentralizedModel(scenario.with_beta(pts[0]))
    best = None
    for b in pts:
        try:
            r = model.solve(b)
        except OracleError as exc:
            log.warning("grid point %s skipped: %s", b, exc)
            continue
        if best is None or r.objective > best[1]:
            best = (b, r.objective, r)
    if best is None:
        raise OracleError("every grid point failed")
    return best


def _project_floor_budget(y: np.ndarray, beta: float, floor: float) -> np.ndarray:
    """Projection onto ``{theta >= floor, sum(theta) <= beta}`` by bisection on the shift."""
    x = np.maximum(y, floor)
    if x.sum() <= beta:
        return x
    lo, hi = 0.0, float(np.max(y) - floor)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(y - mid, floor).sum() > beta:
            lo = mid
        else:
            hi = mid
    return np.maximum(y - hi, floor)


def projected_gradient_channel(a_dt, a_df, beta: float, theta_min: float,
                               max_iter: int = 200_000, tol: float = 1e-15):
    """Maximize one control node's rate over its channel shares by projected gradient.

    Rates as functions of the share are ``theta log2(1 + a/theta)`` (DT) and
    ``theta/2 log2(1 + a/theta)`` (DF).  Uses an Armijo backtracking step
    and stops when an iteration improves the objective by less than
    ``tol``.  Returns ``(theta_dt, theta_df, objective, iterations)``.
    """
    a_dt = np.asarray(a_dt, float)
    a_df = np.asarray(a_df, float)
    a = np.concatenate([a_dt, a_df])
    w = np.concatenate([np.ones(a_dt.size), 0.5 * np.ones(a_df.size)])
    n = a.size

    def value(th):
        return float(np.sum(w * th * np.log1p(a / th)) / LN2)

    def grad(th):
        u = a / th
        return w * (np.log1p(u) - u / (1.0 + u)) / LN2

    th = _project_floor_budget(np.full(n, beta / n), beta, theta_min)
    f = value(th)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        g = grad(th)
        while True:
            cand = _project_floor_budget(th + step * g, beta, theta_min)
            fc = value(cand)
            # Armijo condition along the projection arc
            if fc >= f + 1e-4 * g @ (cand - th) - 1e-16 or step < 1e-16:
                break
            step *= 0.5
        gain = fc - f
        th, f = cand, fc
        step *= 2.0
        if gain <= tol * max(1.0, abs(f)):
            break
    return th[:a_dt.size], th[a_dt.size:], f, it
