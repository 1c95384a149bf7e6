import itertools

import numpy as np
import pytest
import yaml
from conftest import build, data_path, gains_doc

from relayopt import ScenarioError, compute_s_bound, filter_candidate_relays, load_scenario
from relayopt.scenario import InfeasibleBudgetError, default_scenario_path, gains_from_geometry


def test_gains_from_geometry_examples():
    assert gains_from_geometry((0, 0), (1, 0), 4.0, 25.0) == pytest.approx(10 ** 2.5, rel=1e-14)
    assert gains_from_geometry((0, 0), (0, 1), 4.0, 0.0) == pytest.approx(1.0, rel=1e-15)
    assert gains_from_geometry((0, 0), (2, 0), 4.0, 25.0) == pytest.approx(10 ** 2.5 / 16,
                                                                           rel=1e-14)
    assert gains_from_geometry((0, 0), (2, 0), 4.0, 25.0) == pytest.approx(19.764, abs=1e-3)
    with pytest.raises(ValueError):
        gains_from_geometry((1, 1), (1, 1))


def test_default_scenario_shape(default_scenario):
    sc = default_scenario
    assert sc.n_streams == 5
    assert len(sc.relay_ids) == 2
    assert sc.n_controls == 3
    assert len(sc.node_ids) == 4


def test_filter_strict_inequality():
    # stream 1: g_sr == g_sd (removed); stream 2: g_sr == 2 g_sd (kept)
    doc = gains_doc([3.0, 3.0], [[3.0], [6.0]], [[5.0], [5.0]], beta=(1.0,))
    sc = build(doc)
    assert sc.streams[0].candidates == ()
    assert sc.streams[1].candidates == (1,)
    raw = build(doc, filter_relays=False)
    assert raw.streams[0].candidates == (1,)


def test_filter_matches_predicate(rng):
    for _ in range(20):
        M, J = rng.integers(1, 5), rng.integers(1, 4)
        sd = rng.uniform(0.5, 5.0, M)
        sr = rng.uniform(0.5, 5.0, (M, J))
        tie = rng.random((M, J)) < 0.2  # boundary cases g_sr == g_sd
        sr[tie] = np.repeat(sd[:, None], J, 1)[tie]
        rd = rng.uniform(0.5, 5.0, (M, J))
        raw = build(gains_doc(sd, sr.tolist(), rd.tolist(), beta=(10.0,)), filter_relays=False)
        kept = filter_candidate_relays(raw)
        for m in range(M):
            expect = tuple(j + 1 for j in range(J) if sr[m, j] > sd[m])
            assert kept.streams[m].candidates == expect


def test_load_errors(tmp_path):
    doc = yaml.safe_load(data_path("two_link").read_text())
    # missing budget for the only control node
    bad = dict(doc, channel={"beta": [], "theta_min": 0.01})
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(bad))
    with pytest.raises(ScenarioError) as err:
        load_scenario(p)
    assert err.value.field == "channel.beta"
    # budget smaller than theta_min times the two links
    short = dict(doc, channel={"beta": [0.015], "theta_min": 0.01})
    p.write_text(yaml.safe_dump(short))
    with pytest.raises(InfeasibleBudgetError):
        load_scenario(p)
    p.write_text("nodes: [unclosed")
    with pytest.raises(ScenarioError):
        load_scenario(p)
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.yaml")


def test_s_bound_examples():
    # one source with two streams, each with the shared relay as candidate
    doc = gains_doc([1.0, 1.0], [[5.0], [5.0]], [[5.0], [5.0]], sources=[1, 1])
    assert compute_s_bound(build(doc)) == 4
    assert compute_s_bound(build(gains_doc([1.0]))) == 1


def test_s_bound_by_enumeration(default_scenario):
    E = default_scenario.links.E
    assert compute_s_bound(default_scenario) == int(max(E.sum(axis=1)))
    # every row of E counts links through that source or relay
    assert all(set(np.unique(row)) <= {0.0, 1.0} for row in E)


def test_incidence_structure(default_scenario):
    lk = default_scenario.links
    M, L = lk.n_dt, lk.n_df
    E = lk.E
    assert E.shape == (lk.n_nodes + lk.n_relays, M + 2 * L)
    # every power variable belongs to exactly one source or relay row
    assert np.all(E.sum(axis=0) == 1)
    for i in range(L):
        assert E[lk.df_src[i], M + i] == 1
        assert E[lk.n_nodes + lk.df_relay[i], M + L + i] == 1


def test_equal_split_and_floors(default_scenario):
    sc = default_scenario
    t_dt, t_df = sc.equal_split_theta()
    lk = sc.links
    for t in range(sc.n_controls):
        i_dt, i_df = lk.control_members(t)
        assert t_dt[i_dt].sum() + t_df[i_df].sum() == pytest.approx(sc.beta[t])
    assert np.allclose(sc.min_budget(), sc.theta_min * lk.links_per_control())


def test_without_relays(default_scenario):
    sc = default_scenario.without_relays()
    assert sc.links.n_df == 0
    assert sc.links.n_dt == default_scenario.links.n_dt


@pytest.mark.parametrize("name", ["default_scenario", "single_link", "two_link",
                                  "mirrored", "shared_relay"])
def test_bundled_files_load(name):

    path = default_scenario_path() if name == "default_scenario" else data_path(name)
    sc = load_scenario(path)
    assert np.all(sc.beta >= sc.min_budget())
    assert sc.polytope.contains(sc.beta)


def test_polytope_rows_checked():
    doc = gains_doc([1.0], beta=(1.0,), polytope=[{"coeffs": [1, 1], "rhs": 1}])
    with pytest.raises(ScenarioError):
        build(doc)


def test_all_pairs_filter_default(default_scenario):
    raw = load_scenario(default_scenario_path(), filter_relays=False)
    g = raw.gains
    for (m, s), (j, rid) in itertools.product(enumerate(default_scenario.streams),
                                             enumerate(raw.relay_ids)):
        assert (rid in s.candidates) == bool(g.sr[m, j] > g.sd[m])
