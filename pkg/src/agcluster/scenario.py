"""Concrete inputs: the three-server example, parametric tree networks, presets."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Optional, Union

from .netmodel import Asset, Exploit, FactCatalog, NetworkSpec, intern_fact

log = logging.getLogger(__name__)

INTERNET = "internet-access"


class UnsupportedScenarioError(ValueError):
    pass


def _root(host: str) -> str:
    return f"root({host})"


def example_three_server() -> NetworkSpec:
    """Web, file and database servers; the db OS bug needs a foothold on web or file.

    The db exploit is disjunctive, so it is encoded as two records (e2a via
    web, e2b via file) sharing the group ``exploit-2``.
    """
    cat = FactCatalog()
    inet, web, fil, db = (intern_fact(cat, s) for s in (INTERNET, _root("web"), _root("file"), _root("db")))
    exploits = [
        Exploit(0, "exploit-0", frozenset({inet}), frozenset({web}), "exploit-0"),
        Exploit(1, "exploit-1", frozenset({inet}), frozenset({fil}), "exploit-1"),
        Exploit(2, "exploit-2a", frozenset({web}), frozenset({db}), "exploit-2"),
        Exploit(3, "exploit-2b", frozenset({fil}), frozenset({db}), "exploit-2"),
    ]
    assets = [Asset("web", "server"), Asset("file", "server"), Asset("db", "server")]
    return NetworkSpec(catalog=cat, exploits=exploits, initial=frozenset({inet}), assets=assets)


@dataclass
class TreeScenarioParams:
    """Servers hang off the internet; workstations hang off their server.

    ``vulnerable_servers`` is an explicit set of server indices or a
    fraction of all servers. ``vulnerable_workstations`` is an explicit
    per-server count (the first k workstations of that server) or a fraction
    of all workstations, drawn from ``seed``.
    """

    servers: int
    workstations_per_server: Union[int, list[int]]
    vulnerable_servers: Union[set[int], float] = 1.0
    vulnerable_workstations: Union[list[int], float] = 1.0
    seed: int = 0

    def ws_counts(self) -> list[int]:
        if isinstance(self.workstations_per_server, int):
            return [self.workstations_per_server] * self.servers
        counts = list(self.workstations_per_server)
        if len(counts) != self.servers:
            raise ValueError("workstations_per_server list length must equal servers")
        return counts

    @property
    def total_hosts(self) -> int:
        return self.servers + sum(self.ws_counts())

    def resolve(self) -> tuple[list[int], list[list[int]]]:
        """(sorted vulnerable server ids, per-server sorted vulnerable workstation ids)."""
        counts = self.ws_counts()
        if self.servers < 0 or any(c < 0 for c in counts):
            raise ValueError("host counts must be non-negative")
        rng = random.Random(self.seed)
        if isinstance(self.vulnerable_servers, float):
            _check_fraction(self.vulnerable_servers)
            k = round(self.vulnerable_servers * self.servers)
            vsrv = sorted(rng.sample(range(self.servers), k))
        else:
            vsrv = sorted(self.vulnerable_servers)
            if any(not 0 <= s < self.servers for s in vsrv):
                raise ValueError("vulnerable server index out of range")
        if isinstance(self.vulnerable_workstations, float):
            _check_fraction(self.vulnerable_workstations)
            pool = [(s, w) for s, c in enumerate(counts) for w in range(c)]
            k = round(self.vulnerable_workstations * len(pool))
            picked = sorted(rng.sample(pool, k))
            vws: list[list[int]] = [[] for _ in counts]
            for s, w in picked:
                vws[s].append(w)
        else:
            per = list(self.vulnerable_workstations)
            if len(per) != self.servers or any(not 0 <= k <= c for k, c in zip(per, counts)):
                raise ValueError("vulnerable workstation counts inconsistent with workstation totals")
            vws = [list(range(k)) for k in per]
        return vsrv, vws


def _check_fraction(f: float) -> None:
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"fraction {f} outside [0, 1]")


def _server(s: int) -> str:
    return f"srv{s}"


def _ws(s: int, w: int) -> str:
    return f"ws{s}.{w}"


def tree_network(p: TreeScenarioParams) -> NetworkSpec:
    vsrv, vws = p.resolve()
    cat = FactCatalog()
    inet = intern_fact(cat, INTERNET)
    assets: list[Asset] = []
    exploits: list[Exploit] = []
    vset = set(vsrv)
    for s, count in enumerate(p.ws_counts()):
        assets.append(Asset(_server(s), "server"))
        assets.extend(Asset(_ws(s, w), "workstation") for w in range(count))
    for s in range(p.servers):
        if s in vset:
            fid = intern_fact(cat, _root(_server(s)))
            exploits.append(Exploit(len(exploits), f"exploit-{_server(s)}", frozenset({inet}), frozenset({fid})))
    for s in range(p.servers):
        if not vws[s]:
            continue
        srv_fact = intern_fact(cat, _root(_server(s)))
        for w in vws[s]:
            fid = intern_fact(cat, _root(_ws(s, w)))
            exploits.append(Exploit(len(exploits), f"exploit-{_ws(s, w)}", frozenset({srv_fact}), frozenset({fid})))
    if not exploits:
        log.warning("tree scenario has no vulnerable hosts; the graph is the root state only")
    return NetworkSpec(catalog=cat, exploits=exploits, initial=frozenset({inet}), assets=assets)


@dataclass(frozen=True)
class CountPrediction:
    states: int
    edges: int


def predict_counts(p: TreeScenarioParams) -> CountPrediction:
    """Exact state/edge counts of the tree scenario's graph, without generating it.

    Server subtrees are independent. A vulnerable server with w reachable
    vulnerable workstations contributes 1 + 2**w local states and
    1 + w * 2**(w - 1) local edges; the global graph is their product.
    """
    if not isinstance(p, TreeScenarioParams):
        raise UnsupportedScenarioError("count prediction supports tree scenarios only")
    vsrv, vws = p.resolve()
    comps = []
    for s in vsrv:
        w = len(vws[s])
        n_states = 1 + (1 << w)
        n_edges = 1 + (w << (w - 1) if w else 0)
        comps.append((n_states, n_edges))
    states = 1
    for n, _ in comps:
        states *= n
    edges = sum(e * states // n for n, e in comps)
    return CountPrediction(states, edges)


def paper150_params() -> TreeScenarioParams:
    """150 hosts, 30 vulnerable: 15 servers with 9 workstations each.

    Servers 0-9 are vulnerable; nine of them have two vulnerable
    workstations and one has one. Server 10 is not vulnerable but has one
    vulnerable (unreachable) workstation, bringing the total to 30.
    """
    return TreeScenarioParams(
        servers=15,
        workstations_per_server=9,
        vulnerable_servers=set(range(10)),
        vulnerable_workstations=[2] * 9 + [1, 1] + [0] * 4,
    )


@dataclass
class Preset:
    name: str
    spec: NetworkSpec
    params: Optional[TreeScenarioParams] = field(default=None)


def parse_tree_preset(name: str, default_seed: int = 0) -> TreeScenarioParams:
    """``tree:<servers>x<ws>:<vuln-spec>[:<seed>]``.

    vuln-spec is ``all``, ``none``, a fraction ``f`` applied to servers and
    workstations alike, or ``fs/fw`` with separate fractions.
    """
    parts = name.split(":")
    if len(parts) not in (3, 4) or parts[0] != "tree":
        raise ValueError(f"bad tree preset {name!r}; expected tree:<servers>x<ws>:<vuln-spec>[:<seed>]")
    try:
        srv_s, ws_s = parts[1].lower().split("x")
        servers, ws = int(srv_s), int(ws_s)
        seed = int(parts[3]) if len(parts) == 4 else default_seed
    except ValueError as exc:
        raise ValueError(f"bad tree preset {name!r}: {exc}") from exc
    vuln = parts[2]
    if vuln == "all":
        fs = fw = 1.0
    elif vuln == "none":
        fs = fw = 0.0
    elif "/" in vuln:
        a, b = vuln.split("/")
        fs, fw = float(a), float(b)
    else:
        fs = fw = float(vuln)
    return TreeScenarioParams(servers, ws, fs, fw, seed)


def resolve_preset(name: str, seed: int = 0) -> Preset:
    if name == "fig1":
        return Preset(name, example_three_server())
    if name == "paper-150":
        p = paper150_params()
        return Preset(name, tree_network(p), p)
    if name.startswith("tree:"):
        p = parse_tree_preset(name, seed)
        return Preset(name, tree_network(p), p)
    raise ValueError(f"unknown preset {name!r}; known: fig1, paper-150, tree:<servers>x<ws>:<vuln-spec>[:<seed>]")
