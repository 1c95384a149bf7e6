"""Network model: nodes, streams, channel gains, limits and the budget polytope.

A scenario is immutable once built.  Everything the solvers need is
flattened into a :class:`LinkTable` with one entry per DT link (one per
stream) and one per DF link (one per stream/candidate-relay pair), in
stream order and, within a stream, candidate order.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

log = logging.getLogger(__name__)

__all__ = [
    "ScenarioError",
    "InfeasibleBudgetError",
    "Stream",
    "Gains",
    "Polytope",
    "LinkTable",
    "NetworkScenario",
    "Allocation",
    "gains_from_geometry",
    "filter_candidate_relays",
    "compute_s_bound",
    "load_scenario",
    "parse_scenario",
    "default_scenario_path",
]


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class InfeasibleBudgetError(ScenarioError):
    """A control node's budget cannot give every link ``theta_min``."""


@dataclass(frozen=True)
class Stream:
    id: int
    source: int
    dest: int
    control: int
    candidates: tuple[int, ...] = ()


@dataclass(frozen=True)
class Gains:
    """Normalized channel gains.

    ``sd[m]`` is the source-destination gain of stream ``m``; ``sr[m, j]``
    and ``rd[m, j]`` are the source-relay and relay-destination gains for
    relay index ``j`` (all relays, candidates or not).
    """

    sd: np.ndarray
    sr: np.ndarray
    rd: np.ndarray


@dataclass(frozen=True)
class Polytope:
    """Budget set ``{beta >= 0 : A beta <= b}``."""

    A: np.ndarray
    b: np.ndarray

    def contains(self, beta, tol=1e-9) -> bool:
        beta = np.asarray(beta, float)
        return bool(np.all(beta >= -tol) and np.all(self.A @ beta <= self.b + tol))

    @classmethod
    def simplex_cap(cls, dim: int, total: float = 1.0) -> "Polytope":
        return cls(np.ones((1, dim)), np.array([float(total)]))


@dataclass(frozen=True)
class LinkTable:
    """Flattened link structure and the incidence matrix ``E``.

    The power vector is ordered ``[ps_dt (M), ps_df (L), pr_df (L)]``; the
    rows of ``E`` are the ``N`` source nodes followed by the ``J`` relays.
    """

    n_nodes: int
    n_relays: int
    n_controls: int
    dt_src: np.ndarray
    dt_ctrl: np.ndarray
    g_sd_dt: np.ndarray
    df_stream: np.ndarray
    df_relay: np.ndarray
    df_src: np.ndarray
    df_ctrl: np.ndarray
    g_sr: np.ndarray
    g_sd_df: np.ndarray
    g_rd: np.ndarray
    E: np.ndarray

    @property
    def n_dt(self) -> int:
        return len(self.dt_src)

    @property
    def n_df(self) -> int:
        return len(self.df_src)

    def control_members(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices of the DT and DF links managed by control node ``t``."""
        return np.flatnonzero(self.dt_ctrl == t), np.flatnonzero(self.df_ctrl == t)

    def links_per_control(self) -> np.ndarray:
        counts = np.bincount(self.dt_ctrl, minlength=self.n_controls)
        counts += np.bincount(self.df_ctrl, minlength=self.n_controls)
        return counts


@dataclass
class Allocation:
    """All primal variables of the joint allocation problem."""

    ps_dt: np.ndarray
    ps_df: np.ndarray
    pr_df: np.ndarray
    theta_dt: np.ndarray
    theta_df: np.ndarray

    @classmethod
    def zeros(cls, scenario: "NetworkScenario", theta=None) -> "Allocation":
        lk = scenario.links
        if theta is None:
            theta = scenario.equal_split_theta()
        theta_dt, theta_df = theta
        return cls(np.zeros(lk.n_dt), np.zeros(lk.n_df), np.zeros(lk.n_df),
                   np.array(theta_dt, float), np.array(theta_df, float))

    @classmethod
    def from_vectors(cls, power, theta, n_dt: int) -> "Allocation":
        power = np.asarray(power, float)
        theta = np.asarray(theta, float)
        n_df = (len(power) - n_dt) // 2
        return cls(power[:n_dt].copy(), power[n_dt:n_dt + n_df].copy(),
                   power[n_dt + n_df:].copy(), theta[:n_dt].copy(), theta[n_dt:].copy())

    def power_vector(self) -> np.ndarray:
        return np.concatenate([self.ps_dt, self.ps_df, self.pr_df])

    def theta_vector(self) -> np.ndarray:
        return np.concatenate([self.theta_dt, self.theta_df])

    def check_shape(self, scenario: "NetworkScenario") -> None:
        lk = scenario.links
        shapes = (len(self.ps_dt), len(self.theta_dt), len(self.ps_df),
                  len(self.pr_df), len(self.theta_df))
        if shapes != (lk.n_dt,) * 2 + (lk.n_df,) * 3:
            raise ValueError(
                f"allocation dimensions {shapes} do not match scenario "
                f"(M={lk.n_dt}, L={lk.n_df})")

    def copy(self) -> "Allocation":
        return Allocation(*(np.array(v, float) for v in dataclasses.astuple(self)))

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in dataclasses.asdict(self).items()}


@dataclass(frozen=True)
class NetworkScenario:
    node_ids: tuple[int, ...]
    relay_ids: tuple[int, ...]
    streams: tuple[Stream, ...]
    gains: Gains
    p_s_max: np.ndarray
    p_r_max: np.ndarray
    beta: np.ndarray
    theta_min: float = 0.01
    polytope: Polytope | None = None
    positions: Mapping[str, Any] | None = None
    radio: Mapping[str, float] | None = None
    params: Mapping[str, Any] = field(default_factory=dict)
    name: str = "scenario"
    links: LinkTable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "p_s_max", np.asarray(self.p_s_max, float))
        object.__setattr__(self, "p_r_max", np.asarray(self.p_r_max, float))
        object.__setattr__(self, "beta", np.asarray(self.beta, float))
        if self.polytope is None:
            object.__setattr__(self, "polytope", Polytope.simplex_cap(len(self.beta)))
        self._validate()
        object.__setattr__(self, "links", self._build_links())

    # -- construction helpers -------------------------------------------------

    @property
    def n_streams(self) -> int:
        return len(self.streams)

    @property
    def n_controls(self) -> int:
        return len(self.beta)

    def node_index(self, node_id: int) -> int:
        return self.node_ids.index(node_id)

    def relay_index(self, relay_id: int) -> int:
        return self.relay_ids.index(relay_id)

    def _validate(self):
        if len(set(self.node_ids)) != len(self.node_ids):
            raise ScenarioError("nodes", "duplicate node id")
        if len(set(self.relay_ids)) != len(self.relay_ids):
            raise ScenarioError("relays", "duplicate relay id")
        if len({s.id for s in self.streams}) != len(self.streams):
            raise ScenarioError("streams", "duplicate stream id")
        if not self.streams:
            raise ScenarioError("streams", "at least one stream is required")
        M, J, T = len(self.streams), len(self.relay_ids), len(self.beta)
        for s in self.streams:
            where = f"streams[{s.id}]"
            if s.source not in self.node_ids:
                raise ScenarioError(where + ".source", f"unknown node {s.source}")
            if s.dest not in self.node_ids:
                raise ScenarioError(where + ".dest", f"unknown node {s.dest}")
            if s.source == s.dest:
                raise ScenarioError(where, "source and destination coincide")
            if not 0 <= s.control < T:
                raise ScenarioError(where + ".control", f"unknown control node {s.control}")
            for j in s.candidates:
                if j not in self.relay_ids:
                    raise ScenarioError(where + ".candidates", f"unknown relay {j}")
            if len(set(s.candidates)) != len(s.candidates):
                raise ScenarioError(where + ".candidates", "duplicate relay")
        g = self.gains
        if np.shape(g.sd) != (M,) or np.shape(g.sr) != (M, J) or np.shape(g.rd) != (M, J):
            raise ScenarioError("gains", f"expected sd[{M}], sr[{M}x{J}], rd[{M}x{J}]")
        for key in ("sd", "sr", "rd"):
            arr = getattr(g, key)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ScenarioError(f"gains.{key}", "gains must be positive and finite")
        if self.p_s_max.shape != (len(self.node_ids),) or np.any(self.p_s_max <= 0):
            raise ScenarioError("limits.p_s_max", "one positive limit per node required")
        if self.p_r_max.shape != (J,) or np.any(self.p_r_max <= 0):
            raise ScenarioError("limits.p_r_max", "one positive limit per relay required")
        if not self.theta_min > 0:
            raise ScenarioError("channel.theta_min", "must be positive")
        if self.beta.ndim != 1 or T == 0:
            raise ScenarioError("channel.beta", "one budget per control node required")
        P = self.polytope
        if P.A.ndim != 2 or P.A.shape[1] != T or P.b.shape != (P.A.shape[0],):
            raise ScenarioError("polytope", f"rows must have {T} coefficients")
        counts = np.zeros(T, int)
        for s in self.streams:
            counts[s.control] += 1 + len(s.candidates)
        short = np.flatnonzero(self.beta < self.theta_min * counts - 1e-12)
        if short.size:
            t = int(short[0])
            raise InfeasibleBudgetError(
                f"channel.beta[{t}]",
                f"budget {self.beta[t]:g} < theta_min x links = "
                f"{self.theta_min:g} x {counts[t]}")

    def _build_links(self) -> LinkTable:
        N, J = len(self.node_ids), len(self.relay_ids)
        dt_src, dt_ctrl, g_sd_dt = [], [], []
        df = {k: [] for k in ("stream", "relay", "src", "ctrl", "sr", "sd", "rd")}
        for m, s in enumerate(self.streams):
            src = self.node_index(s.source)
            dt_src.append(src)
            dt_ctrl.append(s.control)
            g_sd_dt.append(self.gains.sd[m])
            for rid in s.candidates:
                j = self.relay_index(rid)
                df["stream"].append(m)
                df["relay"].append(j)
                df["src"].append(src)
                df["ctrl"].append(s.control)
                df["sr"].append(self.gains.sr[m, j])
                df["sd"].append(self.gains.sd[m])
                df["rd"].append(self.gains.rd[m, j])
        M, L = len(dt_src), len(df["src"])
        E = np.zeros((N + J, M + 2 * L))
        E[dt_src, np.arange(M)] = 1.0
        E[df["src"], M + np.arange(L)] = 1.0
        E[N + np.asarray(df["relay"], int), M + L + np.arange(L)] = 1.0
        ints = lambda v: np.asarray(v, dtype=int)  # noqa: E731
        flts = lambda v: np.asarray(v, dtype=float)  # noqa: E731
        return LinkTable(
            n_nodes=N, n_relays=J, n_controls=len(self.beta),
            dt_src=ints(dt_src), dt_ctrl=ints(dt_ctrl), g_sd_dt=flts(g_sd_dt),
            df_stream=ints(df["stream"]), df_relay=ints(df["relay"]),
            df_src=ints(df["src"]), df_ctrl=ints(df["ctrl"]),
            g_sr=flts(df["sr"]), g_sd_df=flts(df["sd"]), g_rd=flts(df["rd"]), E=E)

    # -- derived quantities ---------------------------------------------------

    @property
    def p_max(self) -> np.ndarray:
        """Stacked power limits ``[p_s_max (N), p_r_max (J)]``."""
        return np.concatenate([self.p_s_max, self.p_r_max])

    def equal_split_theta(self, beta=None) -> tuple[np.ndarray, np.ndarray]:
        """Split each control node's budget equally over its links."""
        beta = self.beta if beta is None else np.asarray(beta, float)
        lk = self.links
        counts = np.maximum(lk.links_per_control(), 1)
        share = np.maximum(beta / counts, self.theta_min)
        return share[lk.dt_ctrl], share[lk.df_ctrl]

    def min_budget(self) -> np.ndarray:
        """Smallest feasible budget per control node."""
        return self.theta_min * self.links.links_per_control()

    def replace(self, **changes) -> "NetworkScenario":
        return dataclasses.replace(self, **changes)

    def with_beta(self, beta) -> "NetworkScenario":
        return self.replace(beta=np.asarray(beta, float))

    def without_relays(self) -> "NetworkScenario":
        """Same network with every candidate set emptied (DT only)."""
        streams = tuple(dataclasses.replace(s, candidates=()) for s in self.streams)
        return self.replace(streams=streams, name=self.name + "-no-relays")

    def summary(self) -> str:
        lk = self.links
        lines = [
            f"scenario {self.name}: {len(self.node_ids)} nodes, {len(self.relay_ids)} relays, "
            f"{self.n_streams} streams, {self.n_controls} control nodes",
            f"  links: {lk.n_dt} DT + {lk.n_df} DF; theta_min={self.theta_min:g}; "
            f"beta={np.array2string(self.beta, precision=4)}",
        ]
        for s in self.streams:
            lines.append(f"  stream {s.id}: {s.source}->{s.dest} control={s.control} "
                         f"candidates={list(s.candidates)}")
        return "\n".join(lines)


# -- operations -------------------------------------------------------------------


def gains_from_geometry(src_xy, dst_xy, path_loss_exponent: float = 4.0,
                        snr_ref_db: float = 25.0):
    """Large-scale path-loss gain between points, per unit transmit power.

    ``g = 10**(snr_ref_db / 10) * d**(-path_loss_exponent)``.  Accepts
    single points (shape ``(2,)``) or stacked points (shape ``(..., 2)``).
    """
    if not path_loss_exponent > 0:
        raise ValueError("path-loss exponent must be positive")
    d = np.linalg.norm(np.asarray(dst_xy, float) - np.asarray(src_xy, float), axis=-1)
    if np.any(d <= 0):
        raise ValueError("coincident nodes give an infinite channel gain")
    return 10.0 ** (snr_ref_db / 10.0) * d ** (-path_loss_exponent)


def filter_candidate_relays(scenario: NetworkScenario) -> NetworkScenario:
    """Drop candidate relays whose source-relay gain does not beat the direct gain.

    A DF link with ``g_sr <= g_sd`` always underperforms the DT link at equal
    power and channel share, so it never needs to be considered.
    """
    streams, removed = [], []
    for m, s in enumerate(scenario.streams):
        keep = tuple(j for j in s.candidates
                     if scenario.gains.sr[m, scenario.relay_index(j)] > scenario.gains.sd[m])
        removed += [(s.id, j) for j in s.candidates if j not in keep]
        streams.append(dataclasses.replace(s, candidates=keep))
    for sid, j in removed:
        log.info("stream %s: relay %s removed from candidates (g_sr <= g_sd)", sid, j)
    if not removed:
        return scenario
    return scenario.replace(streams=tuple(streams))


def compute_s_bound(scenario: NetworkScenario) -> int:
    """Largest number of links any source or relay node takes part in."""
    per_source: dict[int, int] = {}
    per_relay: dict[int, int] = {}
    for s in scenario.streams:
        per_source[s.source] = per_source.get(s.source, 0) + 1 + len(s.candidates)
        for j in s.candidates:
            per_relay[j] = per_relay.get(j, 0) + 1
    return max(list(per_source.values()) + list(per_relay.values()))


# -- file format ------------------------------------------------------------------


def default_scenario_path() -> Path:
    return Path(str(resources.files("relayopt") / "data" / "default_scenario.yaml"))


def _require(d: Mapping, key: str, where: str):
    if not isinstance(d, Mapping) or key not in d:
        raise ScenarioError(f"{where}.{key}" if where else key, "missing")
    return d[key]


def _per_entity(value, n: int, where: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.shape != (n,):
        raise ScenarioError(where, f"expected a scalar or {n} values, got {arr.size}")
    return arr


def _points(entries, where: str) -> tuple[tuple[int, ...], np.ndarray | None]:
    if not isinstance(entries, Sequence) or not entries:
        raise ScenarioError(where, "expected a non-empty list")
    ids, xy = [], []
    for i, e in enumerate(entries):
        ids.append(int(_require(e, "id", f"{where}[{i}]")))
        if "x" in e and "y" in e:
            xy.append((float(e["x"]), float(e["y"])))
    if xy and len(xy) != len(ids):
        raise ScenarioError(where, "either all or none of the entries carry x/y")
    return tuple(ids), (np.array(xy) if xy else None)


def parse_scenario(doc: Mapping[str, Any], *, name: str = "scenario",
                   filter_relays: bool = True) -> NetworkScenario:
    """Build a validated scenario from a parsed scenario document."""
    if not isinstance(doc, Mapping):
        raise ScenarioError("<root>", "expected a mapping")
    node_ids, node_xy = _points(_require(doc, "nodes", ""), "nodes")
    relay_ids, relay_xy = _points(doc["relays"], "relays") if doc.get("relays") else ((), None)

    streams = []
    for i, e in enumerate(_require(doc, "streams", "")):
        where = f"streams[{i}]"
        streams.append(Stream(
            id=int(_require(e, "id", where)),
            source=int(_require(e, "source", where)),
            dest=int(_require(e, "dest", where)),
            control=int(_require(e, "control", where)),
            candidates=tuple(int(j) for j in e.get("candidates", []) or [])))
    M, J = len(streams), len(relay_ids)

    radio = None
    if "gains" in doc:
        g = doc["gains"]
        gains = Gains(np.asarray(_require(g, "sd", "gains"), float),
                      np.asarray(_require(g, "sr", "gains"), float).reshape(M, J),
                      np.asarray(_require(g, "rd", "gains"), float).reshape(M, J))
    elif "radio" in doc:
        radio = {"snr_ref_db": float(_require(doc["radio"], "snr_ref_db", "radio")),
                 "path_loss_exponent": float(_require(doc["radio"], "path_loss_exponent", "radio"))}
        if node_xy is None or (J and relay_xy is None):
            raise ScenarioError("radio", "geometry needs x/y for every node and relay")
        pos = dict(zip(node_ids, node_xy))
        rpos = dict(zip(relay_ids, relay_xy)) if J else {}
        for s in streams:
            if s.source not in pos or s.dest not in pos:
                raise ScenarioError(f"streams[{s.id}]", "references an unknown node")
        try:
            sd = np.array([gains_from_geometry(pos[s.source], pos[s.dest], **_geo(radio))
                           for s in streams])
            sr = np.array([[gains_from_geometry(pos[s.source], rpos[j], **_geo(radio))
                            for j in relay_ids] for s in streams]).reshape(M, J)
            rd = np.array([[gains_from_geometry(rpos[j], pos[s.dest], **_geo(radio))
                            for j in relay_ids] for s in streams]).reshape(M, J)
        except ValueError as exc:
            raise ScenarioError("radio", str(exc)) from None
        gains = Gains(sd, sr, rd)
    else:
        raise ScenarioError("radio", "either 'radio' or 'gains' must be given")

    limits = _require(doc, "limits", "")
    channel = _require(doc, "channel", "")
    beta = _require(channel, "beta", "channel")
    if not isinstance(beta, Sequence):
        raise ScenarioError("channel.beta", "expected one value per control node")
    controls = {s.control for s in streams}
    if controls and max(controls) >= len(beta):
        raise ScenarioError("channel.beta", f"missing budget for control node {max(controls)}")
    polytope = None
    if doc.get("polytope"):
        rows = doc["polytope"]
        A = np.array([_require(r, "coeffs", f"polytope[{i}]") for i, r in enumerate(rows)], float)
        b = np.array([_require(r, "rhs", f"polytope[{i}]") for i, r in enumerate(rows)], float)
        polytope = Polytope(A, b)
    positions = None
    if node_xy is not None:
        positions = {"nodes": {i: tuple(p) for i, p in zip(node_ids, node_xy)},
                     "relays": {i: tuple(p) for i, p in zip(relay_ids, relay_xy)}
                     if relay_xy is not None else {}}
    try:
        sc = NetworkScenario(
            node_ids=node_ids, relay_ids=relay_ids, streams=tuple(streams), gains=gains,
            p_s_max=_per_entity(_require(limits, "p_s_max", "limits"), len(node_ids),
                                "limits.p_s_max"),
            p_r_max=_per_entity(limits.get("p_r_max", 1.0), J, "limits.p_r_max")
            if J else np.zeros(0),
            beta=np.asarray(beta, float),
            theta_min=float(channel.get("theta_min", 0.01)),
            polytope=polytope, positions=positions, radio=radio,
            params=dict(doc.get("params") or {}), name=str(doc.get("name", name)))
    except (TypeError, KeyError) as exc:
        raise ScenarioError("<root>", f"malformed entry ({exc})") from None
    return filter_candidate_relays(sc) if filter_relays else sc


def _geo(radio):
    return {"path_loss_exponent": radio["path_loss_exponent"], "snr_ref_db": radio["snr_ref_db"]}


def load_scenario(path, *, filter_relays: bool = True) -> NetworkScenario:
    """Read and validate a YAML scenario file."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ScenarioError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ScenarioError("<file>", f"parse error: {exc}") from None
    return parse_scenario(doc, name=path.stem, filter_relays=filter_relays)
