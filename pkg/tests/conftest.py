"""Shared fixtures: bundled scenarios and small hand-built networks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from relayopt import load_scenario, parse_scenario
from relayopt.scenario import default_scenario_path

DATA = default_scenario_path().parent


def data_path(name: str) -> Path:
    return DATA / f"{name}.yaml"


def gains_doc(sd, sr=None, rd=None, candidates=None, controls=None, beta=(1.0,),
              p_s_max=1.0, p_r_max=1.0, theta_min=0.01, sources=None, polytope=None):
    """Scenario document with explicit gains; one source/destination pair per stream."""
    sd = list(map(float, sd))
    M = len(sd)
    J = 0 if sr is None else len(sr[0])
    sources = sources or list(range(1, M + 1))
    n_src = max(sources)
    nodes = [{"id": i} for i in range(1, n_src + M + 1)]
    streams = []
    for m in range(M):
        cand = list(range(1, J + 1)) if candidates is None else candidates[m]
        streams.append({"id": m + 1, "source": sources[m], "dest": n_src + m + 1,
                        "control": 0 if controls is None else controls[m],
                        "candidates": cand})
    doc = {"name": "hand", "nodes": nodes, "streams": streams,
           "gains": {"sd": sd, "sr": sr or [[] for _ in sd], "rd": rd or [[] for _ in sd]},
           "limits": {"p_s_max": p_s_max, "p_r_max": p_r_max},
           "channel": {"beta": list(beta), "theta_min": theta_min}}
    if J:
        doc["relays"] = [{"id": j} for j in range(1, J + 1)]
    if polytope is not None:
        doc["polytope"] = polytope
    return doc


@pytest.fixture(scope="session")
def default_scenario():
    return load_scenario(default_scenario_path())


@pytest.fixture(scope="session")
def two_link():
    return load_scenario(data_path("two_link"))


@pytest.fixture(scope="session")
def single_link():
    return load_scenario(data_path("single_link"))


@pytest.fixture(scope="session")
def mirrored():
    return load_scenario(data_path("mirrored"))


@pytest.fixture(scope="session")
def shared_relay():
    return load_scenario(data_path("shared_relay"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def build(doc, **kw):
    return parse_scenario(doc, **kw)


@pytest.fixture(scope="session")
def default_params(default_scenario):
    from relayopt import AlgoParams
    return AlgoParams.from_dict(default_scenario.params)


@pytest.fixture(scope="session")
def default_run(default_scenario, default_params):
    """The protocol on the default network with its bundled parameters (run once)."""
    from relayopt import run_algorithm_a
    return run_algorithm_a(default_scenario, default_params)


@pytest.fixture(scope="session")
def default_oracle(default_scenario):
    from relayopt.oracle import solve_centralized
    return solve_centralized(default_scenario)


# -- acceptance report ------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
