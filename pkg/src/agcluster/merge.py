"""Phase 3: move partial graphs to the master and merge them.

Strategies:

``sequential``  rank 0 receives ranks 1..n-1 in order, merging each on arrival.
``multi``       rank 0 runs one receiver/merger thread per remote rank.
``pipeline``    producer threads only receive, consumer threads only merge,
                joined by a bounded buffer queue.
``hier``        binomial-tree reduction onto rank 0 over ceil(log2 n) rounds.
``none``        no merge; every rank dumps ``partial-r<rank>.agpg``.
"""

from __future__ import annotations

import enum
import math
import os
import queue
import threading
import time
from operator import itemgetter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .graph import AttackGraph, CorruptPartialError, GraphStore, PartialGraph
from .timing import Stopwatch
from .transport import Transport, TransportError
from .wire import WireFormatError, deserialize_partial, serialize_partial

DEFAULT_QUEUE_CAPACITY = 4
DEFAULT_CONSUMERS = 2


class MergeStrategy(str, enum.Enum):
    SEQUENTIAL = "sequential"
    MULTI = "multi"
    PIPELINE = "pipeline"
    HIER = "hier"
    NONE = "none"


MERGING_STRATEGIES = (MergeStrategy.SEQUENTIAL, MergeStrategy.MULTI, MergeStrategy.PIPELINE, MergeStrategy.HIER)


class MergeError(RuntimeError):
    pass


@dataclass
class MergeStats:
    states_added: int = 0
    edges_added: int = 0
    states_dropped: int = 0
    edges_dropped: int = 0
    states_seconds: float = 0.0
    edges_seconds: float = 0.0

    @property
    def duplicates_dropped(self) -> int:
        return self.states_dropped + self.edges_dropped

    def __iadd__(self, other: "MergeStats") -> "MergeStats":
        self.states_added += other.states_added
        self.edges_added += other.edges_added
        self.states_dropped += other.states_dropped
        self.edges_dropped += other.edges_dropped
        self.states_seconds += other.states_seconds
        self.edges_seconds += other.edges_seconds
        return self


def merge_into(master: GraphStore, incoming: GraphStore) -> MergeStats:
    """Add ``incoming``'s states and edges to ``master``, dropping duplicates.

    States are matched by StateKey with fact-set verification; edges are
    matched on the full (src, dst, exploit) triple.
    """
    if master.checksum != incoming.checksum:
        raise WireFormatError(
            f"catalog checksum mismatch: master {master.checksum:016x}, incoming {incoming.checksum:016x}"
        )
    if master.root != incoming.root:
        raise MergeError("partials disagree on the root state")
    stats = MergeStats()
    t0 = time.perf_counter()
    for rec in incoming.state_list():
        if master.add_state(rec.key, rec.facts):
            stats.states_added += 1
        else:
            stats.states_dropped += 1
    t1 = time.perf_counter()
    endpoints = set(map(itemgetter(0), incoming.edges))
    endpoints.update(map(itemgetter(1), incoming.edges))
    if not endpoints <= incoming.states.keys():
        missing = next(iter(endpoints - incoming.states.keys()))
        raise CorruptPartialError(f"edge endpoint {missing:x} missing from incoming partial")
    stats.edges_added = master.add_edges(incoming.edges)
    stats.edges_dropped = len(incoming.edges) - stats.edges_added
    t2 = time.perf_counter()
    stats.states_seconds = t1 - t0
    stats.edges_seconds = t2 - t1
    return stats


def adopt(local: GraphStore, spec=None) -> AttackGraph:
    """Reuse a partial's containers as the master graph (no copy)."""
    g = AttackGraph(local.root, local.checksum, spec)
    g.states = local.states
    g.edges = local.edges
    return g


@dataclass
class MergeOutcome:
    graph: Optional[AttackGraph]
    stats: MergeStats = field(default_factory=MergeStats)
    timings: dict[str, float] = field(default_factory=dict)
    received: int = 0


class _Worker:
    """Per-thread timing buckets for one receive/merge activity."""

    def __init__(self, transport: Transport, checksum: int):
        self.transport = transport
        self.checksum = checksum
        self.watch = Stopwatch()
        self.stats = MergeStats()
        self.received = 0

    def receive(self, src: int, round_no: Optional[int] = None) -> bytes:
        with self.watch.time("send_recv"):
            try:
                data = self.transport.recv(src)
            except TransportError as exc:
                where = f" round {round_no}" if round_no is not None else ""
                raise TransportError(f"phase 3{where}: rank {self.transport.rank} receiving from rank {src}: {exc}") from exc
        self.received += 1
        return data

    def merge_bytes(self, master: GraphStore, data: bytes) -> None:
        with self.watch.time("comm_prep"):
            incoming = deserialize_partial(data, self.checksum)
        s = merge_into(master, incoming)
        self.watch.totals["merging_states"] = self.watch.get("merging_states") + s.states_seconds
        self.watch.totals["merging_edges"] = self.watch.get("merging_edges") + s.edges_seconds
        self.stats += s

    def send(self, dst: int, g: GraphStore, round_no: Optional[int] = None) -> None:
        with self.watch.time("comm_prep"):
            data = serialize_partial(g)
        with self.watch.time("send_recv"):
            try:
                self.transport.send(dst, data)
            except TransportError as exc:
                where = f" round {round_no}" if round_no is not None else ""
                raise TransportError(f"phase 3{where}: rank {self.transport.rank} sending to rank {dst}: {exc}") from exc


def _start_guarded(
    targets: list[Callable[[], None]], errors: list[BaseException], abort: Optional[threading.Event] = None
) -> list[threading.Thread]:
    def wrap(fn):
        def run():
            try:
                fn()
            except BaseException as exc:
                errors.append(exc)
                if abort is not None:
                    abort.set()

        return run

    threads = [threading.Thread(target=wrap(fn), daemon=True) for fn in targets]
    for t in threads:
        t.start()
    return threads


def _run_threads(targets: list[Callable[[], None]]) -> None:
    errors: list[BaseException] = []
    for t in _start_guarded(targets, errors):
        t.join()
    if errors:
        raise errors[0]


def _collect(outcome: MergeOutcome, workers: list[_Worker], concurrent: bool) -> None:
    """Fold per-thread buckets into the outcome.

    Concurrent strategies report the largest per-thread value in each bucket
    so sub-timings stay within the phase's wall time.
    """
    for name in ("comm_prep", "send_recv", "merging_states", "merging_edges"):
        vals = [w.watch.get(name) for w in workers]
        outcome.timings[name] = (max(vals) if concurrent else sum(vals)) if vals else 0.0
    for w in workers:
        outcome.stats += w.stats
        outcome.received += w.received


def run_merge(
    strategy: MergeStrategy,
    transport: Optional[Transport],
    local: PartialGraph,
    *,
    spec=None,
    consumers: int = DEFAULT_CONSUMERS,
    producers: Optional[int] = None,
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
    out_dir: Optional[os.PathLike] = None,
) -> MergeOutcome:
    """Run phase 3 on one rank. Only rank 0 gets a graph back."""
    strategy = MergeStrategy(strategy)
    rank = transport.rank if transport is not None else 0
    comm_sz = transport.comm_sz if transport is not None else 1
    checksum = local.checksum

    if strategy is MergeStrategy.NONE:
        return _dump(local, rank, out_dir)
    if comm_sz == 1:
        return MergeOutcome(adopt(local, spec))
    if strategy is MergeStrategy.HIER:
        return _hierarchical(transport, local, spec)

    if rank != 0:
        w = _Worker(transport, checksum)
        w.send(0, local)
        out = MergeOutcome(None)
        _collect(out, [w], concurrent=False)
        return out

    master = adopt(local, spec)
    out = MergeOutcome(master)
    sources = list(range(1, comm_sz))
    if strategy is MergeStrategy.SEQUENTIAL:
        w = _Worker(transport, checksum)
        for src in sources:
            w.merge_bytes(master, w.receive(src))
        _collect(out, [w], concurrent=False)
    elif strategy is MergeStrategy.MULTI:
        workers = [_Worker(transport, checksum) for _ in sources]

        def receiver(w: _Worker, src: int):
            return lambda: w.merge_bytes(master, w.receive(src))

        _run_threads([receiver(w, s) for w, s in zip(workers, sources)])
        _collect(out, workers, concurrent=True)
    elif strategy is MergeStrategy.PIPELINE:
        _pipeline(out, transport, master, sources, consumers, producers, queue_capacity)
    return out


def _pipeline(out, transport, master, sources, n_consumers, n_producers, capacity) -> None:
    n_producers = max(1, min(n_producers or len(sources), len(sources)))
    n_consumers = max(1, n_consumers)
    buffers: queue.Queue = queue.Queue(maxsize=max(1, capacity))
    abort = threading.Event()
    errors: list[BaseException] = []
    done = object()
    prod = [_Worker(transport, master.checksum) for _ in range(n_producers)]
    cons = [_Worker(transport, master.checksum) for _ in range(n_consumers)]

    def put(item) -> None:
        # producers block while the buffer is full, unless the run is aborting
        while not abort.is_set():
            try:
                buffers.put(item, timeout=0.05)
                return
            except queue.Full:
                pass
        raise MergeError("pipeline aborted")

    def producer(i: int):
        def run():
            for src in sources[i::n_producers]:
                put(prod[i].receive(src))

        return run

    def consumer(i: int):
        def run():
            while not abort.is_set():
                try:
                    item = buffers.get(timeout=0.05)
                except queue.Empty:
                    continue
                if item is done:
                    return
                cons[i].merge_bytes(master, item)

        return run

    consumer_threads = _start_guarded([consumer(i) for i in range(n_consumers)], errors, abort)
    for t in _start_guarded([producer(i) for i in range(n_producers)], errors, abort):
        t.join()
    for _ in consumer_threads:
        try:
            put(done)
        except MergeError:
            break
    for t in consumer_threads:
        t.join()
    if errors:
        raise errors[0]
    _collect(out, prod + cons, concurrent=True)


def hierarchical_schedule(comm_sz: int) -> list[list[tuple[int, int]]]:
    """Per round, the (src, dst) transfers of the binomial-tree reduction."""
    rounds = []
    for k in range(math.ceil(math.log2(comm_sz)) if comm_sz > 1 else 0):
        step = 1 << k
        rounds.append([(r, r - step) for r in range(comm_sz) if r % (2 * step) == step])
    return rounds


def _hierarchical(transport: Transport, local: PartialGraph, spec) -> MergeOutcome:
    rank, comm_sz = transport.rank, transport.comm_sz
    w = _Worker(transport, local.checksum)
    acc: GraphStore = local
    n_rounds = math.ceil(math.log2(comm_sz))
    sent = False
    for k in range(n_rounds):
        step = 1 << k
        if rank % (2 * step) == step:
            w.send(rank - step, acc, round_no=k)
            sent = True
            break
        if rank % (2 * step) == 0 and rank + step < comm_sz:
            w.merge_bytes(acc, w.receive(rank + step, round_no=k))
    out = MergeOutcome(None if sent or rank != 0 else adopt(acc, spec))
    _collect(out, [w], concurrent=False)
    return out


def partial_path(out_dir: os.PathLike, rank: int) -> Path:
    return Path(out_dir) / f"partial-r{rank}.agpg"


def _dump(local: PartialGraph, rank: int, out_dir: Optional[os.PathLike]) -> MergeOutcome:
    if out_dir is None:
        raise MergeError("strategy 'none' needs an output directory for partial dumps")
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    watch = Stopwatch()
    with watch.time("comm_prep"):
        data = serialize_partial(local, rank)
        partial_path(out_dir, rank).write_bytes(data)
    return MergeOutcome(None, timings={"comm_prep": watch.get("comm_prep")})


def merge_dumps(paths, spec=None, expected_checksum: Optional[int] = None) -> AttackGraph:
    """Offline merge of ``partial-r*.agpg`` files, in the given order."""
    paths = list(paths)
    if not paths:
        raise MergeError("no partial dumps to merge")
    first = deserialize_partial(Path(paths[0]).read_bytes(), expected_checksum)
    master = adopt(first, spec)
    for p in paths[1:]:
        merge_into(master, deserialize_partial(Path(p).read_bytes(), expected_checksum))
    return master
