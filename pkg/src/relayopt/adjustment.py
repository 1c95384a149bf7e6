"""Centralized adjustment of the control nodes' channel budgets.

The outer loop is a projected subgradient method on the budget vector
``beta``: after (a warm-started run of) the distributed protocol, each
control node reports its channel multiplier ``omega_t``, which is a
subgradient of the optimal total rate with respect to ``beta_t``, and the
budgets move to ``proj_B(beta + delta(q) omega)``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .protocol import AlgoParams, ProtocolState, RunResult, run_algorithm_a
from .scenario import NetworkScenario, Polytope

log = logging.getLogger(__name__)

__all__ = [
    "EmptyPolytopeError",
    "AdjustParams",
    "OuterTrace",
    "AdjustResult",
    "project_onto_B",
    "step_beta",
    "run_algorithm_1",
]


class EmptyPolytopeError(ValueError):
    """The budget polytope (with floors) contains no point."""


@dataclass
class AdjustParams:
    """Settings of the outer budget loop.

    Parameters
    ----------
    delta : float
        Step size ``delta`` (constant schedule) or its scale ``delta0`` in
        ``delta0 / sqrt(q)`` (diminishing schedule).
    schedule : {"diminishing", "constant"}
    outer_iters : int
        Cap on budget updates.
    inner_iters : int
        Protocol iterations between two budget updates.
    outer_tol : float
        Stop once ``|beta(q+1) - beta(q)| / delta(q) <= outer_tol``.
    final_polish : bool
        Run the protocol to its own stopping test at the final budgets.
    """

    delta: float = 0.3
    schedule: str = "diminishing"
    outer_iters: int = 20_000
    inner_iters: int = 10
    outer_tol: float = 1e-3
    final_polish: bool = True

    def __post_init__(self):
        if self.schedule not in ("diminishing", "constant"):
            raise ValueError(f"unknown delta schedule {self.schedule!r}")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("outer_iters and inner_iters must be at least 1")
        if not self.outer_tol > 0:
            raise ValueError("outer_tol must be positive")

    def step(self, q: int) -> float:
        """Step size of outer iteration ``q`` (1-based)."""
        if self.schedule == "constant":
            return self.delta
        return self.delta / math.sqrt(q)


# -- projection -------------------------------------------------------------------


def _project_capped_simplex(y: np.ndarray, total: float) -> np.ndarray:
    """Projection onto ``{x >= 0, sum(x) <= total}``."""
    x = np.maximum(y, 0.0)
    if x.sum() <= total:
        return x
    # sort-based projection onto the face sum(x) = total
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, len(y) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(y - css[rho] / (rho + 1), 0.0)


def _feasible_point(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    n = G.shape[1]
    if np.all(h >= 0):
        return np.zeros(n)
    res = linprog(np.zeros(n), A_ub=G, b_ub=h, bounds=[(None, None)] * n, method="highs")
    if res.status != 0:
        raise EmptyPolytopeError("budget polytope is empty")
    return res.x


def _active_set_projection(y, G, h, tol=1e-12, max_iter=500):
    """Primal active-set method for ``min |x - y|^2 / 2  s.t.  G x <= h``."""
    x = _feasible_point(G, h)
    slack = h - G @ x
    if np.any(slack < -1e-9):
        raise EmptyPolytopeError("budget polytope is empty")
    work = [i for i in np.flatnonzero(np.abs(slack) <= tol)]
    # keep a linearly independent working set
    indep: list[int] = []
    for i in work:
        if np.linalg.matrix_rank(G[indep + [i]]) == len(indep) + 1:
            indep.append(i)
    work = indep
    for _ in range(max_iter):
        d = y - x
        if work:
            Gw = G[work]
            lam = np.linalg.solve(Gw @ Gw.T, Gw @ d)
            p = d - Gw.T @ lam
        else:
            lam = np.zeros(0)
            p = d
        if np.linalg.norm(p) <= tol * max(1.0, np.linalg.norm(x)):
            if lam.size == 0 or lam.min() >= -tol:
                return x
            work.pop(int(np.argmin(lam)))
            continue
        Gp = G @ p
        step, block = 1.0, None
        for i in range(len(h)):
            if i in work or Gp[i] <= tol:
                continue
            t = (h[i] - G[i] @ x) / Gp[i]
            if t < step:
                step, block = max(t, 0.0), i
        x = x + step * p
        if block is not None:
            work.append(block)
    raise RuntimeError("active-set projection did not terminate")


def project_onto_B(beta, polytope: Polytope | None, lower=None) -> np.ndarray:
    """Euclidean projection onto ``{A beta <= b, beta >= lower}``.

    ``lower`` defaults to zero; the protocol passes the per-node floors
    ``theta_min * (links at the node)`` so every projected budget keeps its
    inner problem feasible.  A single all-equal row with positive
    coefficients (the capped simplex) takes a closed-form path; other
    polytopes go through a small primal active-set method.
    """
    beta = np.asarray(beta, float)
    n = beta.size
    lo = np.zeros(n) if lower is None else np.asarray(lower, float)
    if polytope is None:
        return np.maximum(beta, lo)
    A, b = np.atleast_2d(polytope.A), np.atleast_1d(polytope.b)
    if A.shape[0] == 1 and A[0, 0] > 0 and np.allclose(A[0], A[0, 0]):
        total = b[0] / A[0, 0] - lo.sum()
        if total < -1e-12:
            raise EmptyPolytopeError(f"floors {lo.sum():g} exceed the budget cap {b[0]:g}")
        return lo + _project_capped_simplex(beta - lo, max(total, 0.0))
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, -lo])
    return _active_set_projection(beta, G, h)


def step_beta(beta, omega, delta: float, polytope: Polytope | None, lower=None) -> np.ndarray:
    """One projected subgradient step ``proj_B(beta + delta omega)``."""
    return project_onto_B(np.asarray(beta, float) + delta * np.asarray(omega, float),
                          polytope, lower)


# -- outer loop -------------------------------------------------------------------


@dataclass
class OuterTrace:
    control_ids: tuple
    q: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    omega: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    inner_converged: list = field(default_factory=list)

    def append(self, q, beta, omega, obj, converged):
        self.q.append(q)
        self.beta.append(np.array(beta, float))
        self.omega.append(np.array(omega, float))
        self.objective.append(float(obj))
        self.inner_converged.append(bool(converged))

    def __len__(self) -> int:
        return len(self.q)

    def header(self) -> list[str]:
        return (["q"] + [f"beta_{t}" for t in self.control_ids]
                + [f"omega_{t}" for t in self.control_ids] + ["objective"])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for i in range(len(self.q)):
                w.writerow([self.q[i]] + [repr(float(v)) for v in self.beta[i]]
                           + [repr(float(v)) for v in self.omega[i]]
                           + [repr(self.objective[i])])


@dataclass
class AdjustResult:
    beta: np.ndarray
    run: RunResult  # protocol run at the final budgets
    trace: OuterTrace
    converged: bool  # outer test met
    outer_iterations: int
    unconverged_inner: int  # outer steps taken with an unconverged inner run
    elapsed: float

    @property
    def allocation(self):
        return self.run.allocation

    @property
    def objective(self) -> float:
        return self.run.objective


def run_algorithm_1(scenario: NetworkScenario, algo: AlgoParams | None = None,
                    adjust: AdjustParams | None = None,
                    state: ProtocolState | None = None) -> AdjustResult:
    """Alternate warm-started protocol runs with projected budget steps.

    The first outer step runs the protocol to its stopping test (unless a
    warm ``state`` is given); every later step runs ``inner_iters``
    warm-started iterations at the current budgets, then moves the budgets
    along the reported multipliers.  Multipliers taken while the protocol's
    residuals are above ``stop_tol`` only approximate the subgradient; such
    steps are counted in ``unconverged_inner`` and never end the loop.
    """
    algo = algo or AlgoParams()
    adjust = adjust or AdjustParams()
    if algo.theta_min is not None:
        scenario = scenario.replace(theta_min=float(algo.theta_min))
    floors = scenario.min_budget()
    beta = project_onto_B(scenario.beta, scenario.polytope, floors)
    inner = AlgoParams(**{**algo.__dict__, "max_iters": adjust.inner_iters, "trace_every":
                          adjust.inner_iters, "dump_states": False})
    trace = OuterTrace(tuple(range(len(beta))))
    t0 = time.perf_counter()
    converged, rough, q = False, 0, 0
    for q in range(1, adjust.outer_iters + 1):
        # the first multipliers come from a full run; later ones from short warm-started runs
        params = algo if (q == 1 and state is None) else inner
        run = run_algorithm_a(scenario.with_beta(beta), params, state)
        state = run.state
        settled = run.converged or (run.trace.dual_residual[-1] <= algo.stop_tol
                                    and run.trace.aux_change[-1] <= algo.stop_tol)
        rough += not settled
        trace.append(q, beta, state.omega, run.objective, settled)
        delta = adjust.step(q)
        new = step_beta(beta, state.omega, delta, scenario.polytope, floors)
        moved = float(np.linalg.norm(new - beta))
        beta = new
        if delta == 0 or (settled and moved <= adjust.outer_tol * delta):
            converged = True
            break
    final_params = algo if adjust.final_polish else inner
    run = run_algorithm_a(scenario.with_beta(beta), final_params, state)
    trace.append(q + 1, beta, run.state.omega, run.objective, run.converged)
    elapsed = time.perf_counter() - t0
    if not converged:
        log.warning("budget adjustment stopped at outer_iters=%d", adjust.outer_iters)
    return AdjustResult(beta, run, trace, converged, q, rough, elapsed)
