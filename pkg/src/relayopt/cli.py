"""Command-line front end.

Subcommands: ``validate``, ``run``, ``adjust``, ``oracle``, ``compare``.
Exit codes: 0 ok, 2 bad input, 3 not converged (results still written),
4 reference solver failure.  ``RELAYOPT_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .adjustment import AdjustParams, EmptyPolytopeError, run_algorithm_1
from .oracle import OracleError, solve_centralized
from .protocol import AlgoParams, run_algorithm_a, validate_step_sizes
from .rates import link_rates, objective
from .scenario import (
    NetworkScenario,
    ScenarioError,
    compute_s_bound,
    default_scenario_path,
    load_scenario,
)

log = logging.getLogger("relayopt")

EXIT_OK, EXIT_INPUT, EXIT_UNCONVERGED, EXIT_ORACLE = 0, 2, 3, 4


class InputError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------


def _load(args) -> NetworkScenario:
    path = Path(args.scenario) if args.scenario else default_scenario_path()
    if not path.is_file():
        raise InputError(f"scenario file not found: {path}")
    try:
        sc = load_scenario(path)
    except ScenarioError:
        raise
    except (TypeError, KeyError, ValueError, AttributeError) as exc:
        raise InputError(f"malformed scenario {path}: {exc}") from None
    if args.theta_min is not None:
        sc = sc.replace(theta_min=args.theta_min)
    if args.no_relays:
        sc = sc.without_relays()
    return sc


def _algo_params(args, sc: NetworkScenario) -> AlgoParams:
    try:
        return AlgoParams.from_dict(
            sc.params, c=args.c, alpha=args.alpha, K=args.k, max_iters=args.max_iters,
            stop_tol=args.stop_tol, classic_proximal=args.classic_proximal or None)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid algorithm parameter: {exc}") from None


def _adjust_params(args, sc: NetworkScenario) -> AdjustParams:
    p = sc.params
    try:
        return AdjustParams(
            delta=args.delta if args.delta is not None else float(p.get("delta", 0.3)),
            schedule=args.schedule,
            inner_iters=int(p.get("adjust_every", 10)),
            outer_iters=args.outer_iters,
            outer_tol=args.outer_tol)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid adjustment parameter: {exc}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def power_labels(sc: NetworkScenario) -> list[str]:
    lk = sc.links
    sid = [s.id for s in sc.streams]
    dt = [f"ps_dt[s{sid[m]}]" for m in range(lk.n_dt)]
    df = [f"s{sid[m]},r{sc.relay_ids[j]}" for m, j in zip(lk.df_stream, lk.df_relay)]
    return dt + [f"ps_df[{x}]" for x in df] + [f"pr_df[{x}]" for x in df]


def allocation_report(sc: NetworkScenario, alloc) -> dict:
    """Per-stream links, shares, powers, rates and relay selection."""
    lk = sc.links
    dt_rate, df_rate = link_rates(sc, alloc)
    used = sc.theta_min * (1 + 1e-6)
    streams = []
    for m, s in enumerate(sc.streams):
        links = [{"type": "DT", "relay": None, "theta": float(alloc.theta_dt[m]),
                  "p_s": float(alloc.ps_dt[m]), "p_r": 0.0, "rate": float(dt_rate[m]),
                  "selected": bool(alloc.theta_dt[m] > used)}]
        for i in np.flatnonzero(lk.df_stream == m):
            links.append({"type": "DF", "relay": sc.relay_ids[lk.df_relay[i]],
                          "theta": float(alloc.theta_df[i]), "p_s": float(alloc.ps_df[i]),
                          "p_r": float(alloc.pr_df[i]), "rate": float(df_rate[i]),
                          "selected": bool(alloc.theta_df[i] > used)})
        streams.append({
            "id": s.id, "source": s.source, "dest": s.dest, "control": s.control,
            "rate": float(sum(x["rate"] for x in links)),
            "selected_relays": [x["relay"] for x in links if x["type"] == "DF" and x["selected"]],
            "direct_selected": links[0]["selected"],
            "links": links})
    return {"objective": objective(sc, alloc), "streams": streams}


def _plots(args, fn, *a, **kw) -> None:
    if args.no_plots:
        return
    from . import plotting

    for p in getattr(plotting, fn)(*a, **kw):
        print(f"  figure: {p}")


# -- commands ---------------------------------------------------------------------


def cmd_validate(args) -> int:
    sc = _load(args)
    params = _algo_params(args, sc)
    print(sc.summary())
    S = compute_s_bound(sc)
    report = validate_step_sizes(params, sc, warn=False)
    print(f"S = {S}")
    print(f"step-size check: {report.message()}")
    if not report.ok:
        print(f"warning: alpha above the sufficient bound {report.bound:g} "
              "(convergence is still possible; the bound is not necessary)")
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _load(args)
    params = _algo_params(args, sc)
    out = _out_dir(args)
    report = validate_step_sizes(params, sc, warn=False)
    if not report.ok:
        print(f"warning: {report.message()}")
    res = run_algorithm_a(sc, params)
    res.trace.write_csv(out / "trace.csv")
    if params.dump_states:
        res.trace.write_state_dump(out / "states.json")
    data = allocation_report(sc, res.allocation)
    data.update({"scenario": sc.name, "converged": res.converged,
                 "iterations": res.iterations, "local_solves": res.local_solves,
                 "duals": res.state.duals.tolist(), "omega": res.state.omega.tolist(),
                 "seed": args.seed, "allocation": res.allocation.to_dict()})
    _write_json(out / "allocation.json", data)
    print(f"total spectrum efficiency: {data['objective']:.6f} bits/s/Hz")
    for s in data["streams"]:
        relays = ", ".join(f"relay {j}" for j in s["selected_relays"]) or "direct only"
        print(f"  stream {s['id']}: {s['rate']:.4f} bits/s/Hz via {relays}")
    print(f"iterations: {res.iterations} ({'converged' if res.converged else 'NOT converged'}), "
          f"{res.elapsed:.2f} s")
    _plots(args, "plot_run", res.trace, out)
    return EXIT_OK if res.converged else EXIT_UNCONVERGED


def cmd_adjust(args) -> int:
    sc = _load(args)
    params = _algo_params(args, sc)
    adj = _adjust_params(args, sc)
    out = _out_dir(args)
    res = run_algorithm_1(sc, params, adj)
    res.trace.write_csv(out / "outer_trace.csv")
    data = allocation_report(sc.with_beta(res.beta), res.allocation)
    data.update({"scenario": sc.name, "beta": res.beta.tolist(), "converged": res.converged,
                 "outer_iterations": res.outer_iterations,
                 "unconverged_inner": res.unconverged_inner,
                 "omega": res.run.state.omega.tolist(), "seed": args.seed})
    _write_json(out / "adjust.json", data)
    print(f"final beta: {np.array2string(res.beta, precision=4)}")
    print(f"total spectrum efficiency: {data['objective']:.6f} bits/s/Hz")
    print(f"outer iterations: {res.outer_iterations} "
          f"({'converged' if res.converged else 'NOT converged'}), {res.elapsed:.2f} s")
    _plots(args, "plot_adjust", res.trace, out)
    return EXIT_OK if res.converged and res.run.converged else EXIT_UNCONVERGED


def cmd_oracle(args) -> int:
    sc = _load(args)
    out = _out_dir(args)
    res = solve_centralized(sc)
    data = allocation_report(sc, res.allocation)
    data.update({"scenario": sc.name, "kkt_residual": res.kkt_residual,
                 "solver_iterations": res.iterations, "duals": res.duals.tolist(),
                 "omega": res.omega.tolist(), "allocation": res.allocation.to_dict()})
    _write_json(out / "oracle.json", data)
    print(f"centralized optimum: {res.objective:.6f} bits/s/Hz "
          f"(KKT residual {res.kkt_residual:.2e})")
    return EXIT_OK


def cmd_compare(args) -> int:
    sc = _load(args)
    params = _algo_params(args, sc)
    out = _out_dir(args)
    res = run_algorithm_a(sc, params)
    ref = solve_centralized(sc)
    a, b = res.allocation, ref.allocation
    obj_a, obj_b = objective(sc, a), objective(sc, b)
    gap = obj_a - obj_b
    rel = abs(gap) / max(abs(obj_b), 1e-12)
    dev_p = float(np.max(np.abs(a.power_vector() - b.power_vector()), initial=0.0))
    dev_t = float(np.max(np.abs(a.theta_vector() - b.theta_vector()), initial=0.0))
    data = {"scenario": sc.name, "protocol_objective": obj_a, "oracle_objective": obj_b,
            "gap": gap, "relative_gap": rel, "max_power_deviation": dev_p,
            "max_theta_deviation": dev_t, "protocol_converged": res.converged,
            "iterations": res.iterations, "local_solves": res.local_solves,
            "classic_proximal": params.classic_proximal, "seed": args.seed}
    _write_json(out / "compare.json", data)
    print(f"protocol {obj_a:.6f}  centralized {obj_b:.6f}  gap {gap:+.3e} ({100 * rel:.4f}%)")
    print(f"max power deviation {dev_p:.3e}, max channel-share deviation {dev_t:.3e}")
    print(f"protocol iterations {res.iterations}, local solves {res.local_solves}")
    _plots(args, "plot_run", res.trace, out, reference=obj_b, prefix="compare")
    _plots(args, "plot_compare", a.power_vector(), b.power_vector(), power_labels(sc), out)
    return EXIT_OK if rel <= 0.01 else EXIT_UNCONVERGED


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "adjust": cmd_adjust,
            "oracle": cmd_oracle, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario YAML (default: packaged default network)")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--max-iters", type=int, dest="max_iters")
    common.add_argument("--stop-tol", type=float, dest="stop_tol")
    common.add_argument("--k", type=int, help="channel update period K")
    common.add_argument("--alpha", type=float, help="dual step size")
    common.add_argument("--c", type=float, help="proximal weight")
    common.add_argument("--delta", type=float, help="budget step size (scale)")
    common.add_argument("--schedule", choices=("diminishing", "constant"),
                        default="diminishing", help="budget step schedule")
    common.add_argument("--outer-iters", type=int, default=20_000, dest="outer_iters")
    common.add_argument("--outer-tol", type=float, default=1e-3, dest="outer_tol")
    common.add_argument("--theta-min", type=float, dest="theta_min")
    common.add_argument("--no-relays", action="store_true", dest="no_relays",
                        help="drop every candidate relay (direct links only)")
    common.add_argument("--classic-proximal", action="store_true", dest="classic_proximal")
    common.add_argument("--seed", type=int, default=0,
                        help="recorded in the outputs; runs are deterministic")
    common.add_argument("--no-plots", action="store_true", dest="no_plots")
    parser = argparse.ArgumentParser(prog="relayopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"validate": "check a scenario and the step-size condition",
             "run": "run the distributed protocol",
             "adjust": "run the protocol with budget adjustment",
             "oracle": "solve the centralized problem",
             "compare": "compare the protocol with the centralized optimum"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("RELAYOPT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, EmptyPolytopeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OracleError as exc:
        print(f"error: reference solver failed: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
