"""Attack-graph containers shared by the sequential, parallel and merge paths."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Optional

from .netmodel import FactId, StateKey, canonical_state_key

N_SHARDS = 64


class HashCollisionError(RuntimeError):
    """Two different fact-sets produced the same StateKey."""


class CorruptPartialError(ValueError):
    """A partial graph references states it does not contain."""


@dataclass(slots=True)
class StateRecord:
    key: StateKey
    facts: tuple[FactId, ...]
    local_id: int


class EdgeRecord(NamedTuple):
    src: StateKey
    dst: StateKey
    exploit: int


class GraphStore:
    """States keyed by StateKey plus a triple-deduplicated edge set.

    ``add_state`` and ``add_edges`` are safe to call from several threads:
    state insertion is an atomic check-and-insert per key (sharded locks),
    and ``local_id`` is assigned densely in insertion order.
    """

    def __init__(self, root: StateKey, checksum: int = 0):
        self.root = root
        self.checksum = checksum
        self.states: dict[StateKey, StateRecord] = {}
        self.edges: set[tuple[StateKey, StateKey, int]] = set()
        self._shard_locks = [threading.Lock() for _ in range(N_SHARDS)]
        self._id_lock = threading.Lock()
        self._edge_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.states)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def add_state(self, key: StateKey, facts: tuple[FactId, ...]) -> bool:
        """Insert if absent. Returns True when this call inserted the state.

        A key that is already present with a different fact-set raises
        :class:`HashCollisionError`.
        """
        existing = self.states.get(key)
        if existing is None:
            with self._shard_locks[key % N_SHARDS]:
                existing = self.states.get(key)
                if existing is None:
                    with self._id_lock:
                        rec = StateRecord(key, facts, len(self.states))
                        self.states[key] = rec
                    return True
        if existing.facts != facts:
            raise HashCollisionError(f"state key {key:032x} maps to {existing.facts} and {facts}")
        return False

    def add_edge(self, src: StateKey, dst: StateKey, exploit: int) -> bool:
        t = (src, dst, exploit)
        with self._edge_lock:
            if t in self.edges:
                return False
            self.edges.add(t)
            return True

    def add_edges(self, triples: Iterable[tuple[StateKey, StateKey, int]]) -> int:
        """Bulk insert; returns how many triples were new."""
        with self._edge_lock:
            before = len(self.edges)
            self.edges.update(triples)
            return len(self.edges) - before

    def state_list(self) -> list[StateRecord]:
        """States in local-id order (dense first-seen ids)."""
        return sorted(self.states.values(), key=lambda r: r.local_id)

    def iter_edges(self) -> Iterator[EdgeRecord]:
        for t in self.edges:
            yield EdgeRecord(*t)


class AttackGraph(GraphStore):
    """The complete graph: root, states, edges, and the network spec for decoding."""

    def __init__(self, root: StateKey, checksum: int = 0, spec=None):
        super().__init__(root, checksum)
        self.spec = spec


class PartialGraph(GraphStore):
    """One worker's locally discovered states and edges."""

    def __init__(self, root: StateKey, checksum: int = 0, owner_rank: int = 0):
        super().__init__(root, checksum)
        self.owner_rank = owner_rank

    def copy(self) -> "PartialGraph":
        g = PartialGraph(self.root, self.checksum, self.owner_rank)
        for rec in self.state_list():
            g.add_state(rec.key, rec.facts)
        g.edges = set(self.edges)
        return g


def canonical_form(g: GraphStore) -> tuple[StateKey, frozenset, frozenset]:
    return g.root, frozenset(g.states), frozenset(g.edges)


def canonical_equal(a: GraphStore, b: GraphStore) -> bool:
    """Same root key, same state-key set, same edge-triple set."""
    return a.root == b.root and a.states.keys() == b.states.keys() and a.edges == b.edges


def canonical_diff(a: GraphStore, b: GraphStore) -> Optional[str]:
    if a.root != b.root:
        return "root keys differ"
    sa, sb = a.states.keys(), b.states.keys()
    if sa != sb:
        return f"state sets differ: {len(sa - sb)} only-left, {len(sb - sa)} only-right"
    if a.edges != b.edges:
        return f"edge sets differ: {len(a.edges - b.edges)} only-left, {len(b.edges - a.edges)} only-right"
    return None


def graph_violations(g: GraphStore, require_reachable: bool = True) -> list[str]:
    """Structural checks for a complete graph."""
    out = []
    if g.root not in g.states:
        out.append("root missing from states")
    incoming: set[StateKey] = set()
    for src, dst, _ in g.edges:
        if src not in g.states or dst not in g.states:
            out.append(f"dangling edge endpoint in ({src:x}, {dst:x})")
            break
        if src == dst:
            out.append("self-loop")
            break
        incoming.add(dst)
    for key, rec in g.states.items():
        if list(rec.facts) != sorted(set(rec.facts)):
            out.append(f"state {key:x} facts not strictly sorted")
            break
        if canonical_state_key(rec.facts) != key:
            out.append(f"state {key:x} key does not match its facts")
            break
    if require_reachable:
        orphans = len(set(g.states) - incoming - {g.root})
        if orphans:
            out.append(f"{orphans} non-root states have no incoming edge")
    ids = sorted(r.local_id for r in g.states.values())
    if ids != list(range(len(ids))):
        out.append("local ids are not dense")
    return out
