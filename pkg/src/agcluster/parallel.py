"""Phases 1 and 2 of the cluster algorithm, and the run orchestrator.

Phase 1 is a single-threaded BFS that every worker replicates until the
frontier holds more than ``threshold`` states. The frontier is then split
cyclically over ``comm_sz * n_threads`` thread slots, and in phase 2 each
worker's threads explore their slots independently, sharing one visited
map per worker. Phase 3 lives in :mod:`agcluster.merge`.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import subprocess
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

from .expand import CapacityError
from .graph import AttackGraph, PartialGraph
from .merge import MergeOutcome, MergeStrategy, run_merge
from .netmodel import FactId, NetworkSpec, StateKey, facts_to_mask, key_of_mask, mask_to_facts, require_valid
from .timing import PhaseProfile
from .transport import (
    MemoryMesh,
    SocketTransport,
    Transfer,
    TransferLog,
    Transport,
    format_endpoints,
    open_listeners,
)

log = logging.getLogger(__name__)

SEEDS_PER_THREAD = 64


class WorkerError(RuntimeError):
    def __init__(self, rank: int, phase: str, message: str):
        self.rank = rank
        self.phase = phase
        super().__init__(f"rank {rank} failed in {phase}: {message}")


@dataclass
class WorkerConfig:
    comm_sz: int = 1
    n_threads: int = 1
    threshold: Optional[int] = None
    rank: int = 0
    transport: str = "memory"
    merge_strategy: MergeStrategy = MergeStrategy.SEQUENTIAL

    def __post_init__(self) -> None:
        if self.comm_sz < 1 or self.n_threads < 1:
            raise ValueError("comm_sz and n_threads must be >= 1")
        if not 0 <= self.rank < self.comm_sz:
            raise ValueError(f"rank {self.rank} outside [0, {self.comm_sz})")
        if self.threshold is None:
            self.threshold = SEEDS_PER_THREAD * self.comm_sz * self.n_threads
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.transport not in ("memory", "socket"):
            raise ValueError(f"unknown transport {self.transport!r}")
        self.merge_strategy = MergeStrategy(self.merge_strategy)

    @property
    def total_threads(self) -> int:
        return self.comm_sz * self.n_threads

    def for_rank(self, rank: int) -> "WorkerConfig":
        return dataclasses.replace(self, rank=rank)


class FrontierEntry(NamedTuple):
    key: StateKey
    mask: int

    @property
    def facts(self) -> tuple[FactId, ...]:
        return mask_to_facts(self.mask)


def phase1_seed(
    spec: NetworkSpec, threshold: int, owner_rank: int = 0, max_states: Optional[int] = None
) -> tuple[PartialGraph, list[FrontierEntry]]:
    """BFS from the root until the frontier exceeds ``threshold`` or drains.

    Deterministic: identical input gives an identical partial graph and an
    identical frontier order on every worker.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    require_valid(spec)
    masks = spec.masks
    root_facts = spec.root_facts()
    root_mask = facts_to_mask(root_facts)
    root = key_of_mask(root_mask)
    g = PartialGraph(root, spec.checksum(), owner_rank)
    g.add_state(root, root_facts)
    frontier = deque([FrontierEntry(root, root_mask)])
    while frontier and len(frontier) <= threshold:
        key, mask = frontier.popleft()
        for eid, pre, post in masks:
            if pre & mask != pre or not post & ~mask:
                continue
            nmask = mask | post
            nkey = key_of_mask(nmask)
            if g.add_state(nkey, mask_to_facts(nmask)):
                frontier.append(FrontierEntry(nkey, nmask))
                if max_states is not None and len(g.states) > max_states:
                    raise CapacityError(len(g.states), max_states)
            g.edges.add((key, nkey, eid))
    return g, list(frontier)


def cyclic_partition(queue: Sequence, comm_sz: int, n_threads: int) -> list[list[list]]:
    """Split ``queue`` into ``[rank][thread]`` slots, round-robin.

    Position i goes to slot g = i mod (comm_sz * n_threads), i.e. rank
    g mod comm_sz and thread g div comm_sz: consecutive states land on
    consecutive ranks first, then on the next thread of each rank.
    """
    slots: list[list[list]] = [[[] for _ in range(n_threads)] for _ in range(comm_sz)]
    total = comm_sz * n_threads
    for i, item in enumerate(queue):
        g = i % total
        slots[g % comm_sz][g // comm_sz].append(item)
    return slots


def phase2_explore(
    partial: PartialGraph,
    my_queues: Sequence[Sequence[FrontierEntry]],
    spec: NetworkSpec,
    max_states: Optional[int] = None,
    expanded_log: Optional[list] = None,
) -> PartialGraph:
    """Run one thread per queue until every thread queue is empty.

    Threads share ``partial`` as the worker's visited map: a state is queued
    only by the thread whose check-and-insert created it. Each thread keeps
    its own FIFO and appends what it discovers to it; there is no stealing.
    """
    masks = spec.masks
    key_memo: dict[int, StateKey] = {facts_to_mask(r.facts): k for k, r in list(partial.states.items())}
    errors: list[BaseException] = []
    stop = threading.Event()

    def explore(seed: Sequence[FrontierEntry]) -> None:
        q = deque(seed)
        edges: list[tuple[StateKey, StateKey, int]] = []
        add_state = partial.add_state
        expanded = []
        while q and not stop.is_set():
            key, mask = q.popleft()
            expanded.append(key)
            for eid, pre, post in masks:
                if pre & mask != pre or not post & ~mask:
                    continue
                nmask = mask | post
                nkey = key_memo.get(nmask)
                if nkey is None:
                    # first sighting of this exact fact-set in this worker:
                    # the insert below verifies facts against any key match
                    nkey = key_memo[nmask] = key_of_mask(nmask)
                    if add_state(nkey, mask_to_facts(nmask)):
                        q.append(FrontierEntry(nkey, nmask))
                        if max_states is not None and len(partial.states) > max_states:
                            raise CapacityError(len(partial.states), max_states)
                edges.append((key, nkey, eid))
        partial.add_edges(edges)
        if expanded_log is not None:
            expanded_log.extend(expanded)

    def guarded(seed):
        try:
            explore(seed)
        except BaseException as exc:
            errors.append(exc)
            stop.set()

    queues = [q for q in my_queues]
    if len(queues) == 1:
        guarded(queues[0])
    else:
        threads = [threading.Thread(target=guarded, args=(q,), name=f"phase2-t{i}") for i, q in enumerate(queues)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if errors:
        raise errors[0]
    return partial


@dataclass
class WorkerReport:
    rank: int
    phase1: float = 0.0
    phase2: float = 0.0
    phase3: float = 0.0
    outcome: Optional[MergeOutcome] = None
    partial_states: int = 0
    partial_edges: int = 0


def run_worker(
    spec: NetworkSpec,
    config: WorkerConfig,
    transport: Optional[Transport],
    out_dir=None,
    max_states: Optional[int] = None,
) -> WorkerReport:
    """Phases 1-3 for one rank; rank 0's report carries the merged graph."""
    rank = config.rank
    report = WorkerReport(rank)
    phase = "phase 1"
    try:
        t0 = time.perf_counter()
        partial, frontier = phase1_seed(spec, config.threshold, rank, max_states)
        t1 = time.perf_counter()
        phase = "phase 2"
        mine = cyclic_partition(frontier, config.comm_sz, config.n_threads)[rank]
        phase2_explore(partial, mine, spec, max_states=max_states)
        t2 = time.perf_counter()
        report.partial_states, report.partial_edges = partial.n_states, partial.n_edges
        phase = "phase 3"
        report.outcome = run_merge(config.merge_strategy, transport, partial, spec=spec, out_dir=out_dir)
        t3 = time.perf_counter()
    except WorkerError:
        raise
    except Exception as exc:
        raise WorkerError(rank, phase, f"{type(exc).__name__}: {exc}") from exc
    report.phase1, report.phase2, report.phase3 = t1 - t0, t2 - t1, t3 - t2
    return report


@dataclass
class ParallelResult:
    graph: Optional[AttackGraph]
    profile: PhaseProfile
    transfers: TransferLog
    reports: list[WorkerReport] = field(default_factory=list)


def _profile(master: WorkerReport, total: float, transfers: TransferLog, reports) -> PhaseProfile:
    p = PhaseProfile(
        phase1_total=master.phase1,
        phase2_total=master.phase2,
        phase3_total=master.phase3,
        total_time=total,
    )
    if master.outcome is not None:
        for name in ("comm_prep", "send_recv", "merging_states", "merging_edges"):
            setattr(p, name, master.outcome.timings.get(name, 0.0))
        if master.outcome.graph is not None:
            p.states = master.outcome.graph.n_states
            p.edges = master.outcome.graph.n_edges
    p.duplicates_dropped = sum(r.outcome.stats.duplicates_dropped for r in reports if r.outcome is not None)
    p.messages_sent = transfers.messages
    p.bytes_sent = transfers.nbytes
    return p


def run_parallel(
    spec: NetworkSpec,
    config: WorkerConfig,
    *,
    deployment: str = "threads",
    spec_source: Optional[Sequence[str]] = None,
    out_dir=None,
    max_states: Optional[int] = None,
    timeout: float = 300.0,
) -> ParallelResult:
    """Run all ranks and return rank 0's merged graph plus a phase profile.

    ``deployment="threads"`` runs every rank as a thread group in this
    process over either transport. ``deployment="processes"`` (socket
    transport only) runs rank 0 here and launches one child process per
    other rank; ``spec_source`` holds the worker CLI flags that let children
    load the same spec (e.g. ``["--preset", "fig1"]``).
    """
    require_valid(spec)
    if deployment == "processes":
        if config.transport != "socket":
            raise ValueError("process deployment requires the socket transport")
        if spec_source is None:
            raise ValueError("process deployment needs spec_source flags for the children")
        return _run_processes(spec, config, spec_source, out_dir, max_states, timeout)
    if deployment != "threads":
        raise ValueError(f"unknown deployment {deployment!r}")

    t_start = time.perf_counter()
    n = config.comm_sz
    abort = threading.Event()
    transfers = TransferLog()
    if config.transport == "memory":
        mesh = MemoryMesh(n, timeout)
        mesh.log = transfers
        transports: list[Transport] = [mesh.endpoint(r) for r in range(n)]
    else:
        listeners = open_listeners(n)
        endpoints = [s.getsockname()[:2] for s in listeners]
        transports = [SocketTransport(r, endpoints, listeners[r], transfers, timeout) for r in range(n)]
    for t in transports:
        t.abort_event = abort

    reports: list[Optional[WorkerReport]] = [None] * n
    errors: list[BaseException] = []

    def work(rank: int) -> None:
        try:
            reports[rank] = run_worker(spec, config.for_rank(rank), transports[rank], out_dir, max_states)
        except BaseException as exc:
            errors.append(exc)
            abort.set()

    try:
        if n == 1:
            work(0)
        else:
            threads = [threading.Thread(target=work, args=(r,), name=f"rank-{r}") for r in range(n)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
    finally:
        for t in transports:
            t.close()
    if errors:
        raise _primary_error(errors)
    total = time.perf_counter() - t_start
    done = [r for r in reports if r is not None]
    master = reports[0]
    return ParallelResult(master.outcome.graph, _profile(master, total, transfers, done), transfers, done)


def _primary_error(errors: list[BaseException]) -> BaseException:
    # peers that died only because the run was aborted are secondary
    for e in errors:
        if "aborted by a failed peer" not in str(e):
            return e
    return errors[0]


def _run_processes(spec, config, spec_source, out_dir, max_states, timeout) -> ParallelResult:
    t_start = time.perf_counter()
    n = config.comm_sz
    listeners = open_listeners(n)
    endpoints = [s.getsockname()[:2] for s in listeners]
    for s in listeners[1:]:
        s.close()
    abort = threading.Event()
    children: list[subprocess.Popen] = []
    base = [
        sys.executable,
        "-m",
        "agcluster.worker",
        "--comm-sz",
        str(n),
        "--endpoints",
        format_endpoints(endpoints),
        "--threads",
        str(config.n_threads),
        "--threshold",
        str(config.threshold),
        "--strategy",
        config.merge_strategy.value,
        "--timeout",
        str(timeout),
        *spec_source,
    ]
    if out_dir is not None:
        base += ["--out-dir", os.fspath(out_dir)]
    if max_states is not None:
        base += ["--max-states", str(max_states)]
    for r in range(1, n):
        children.append(
            subprocess.Popen(base + ["--rank", str(r)], stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        )

    failures: list[WorkerError] = []
    outputs: dict[int, tuple[str, str]] = {}

    def watch(rank: int, proc: subprocess.Popen) -> None:
        out, err = proc.communicate()
        outputs[rank] = (out, err)
        if proc.returncode != 0:
            failures.append(_child_error(rank, err))
            abort.set()

    watchers = [threading.Thread(target=watch, args=(r + 1, p), daemon=True) for r, p in enumerate(children)]
    for w in watchers:
        w.start()

    transfers = TransferLog()
    transport = SocketTransport(0, endpoints, listeners[0], transfers, timeout)
    transport.abort_event = abort
    master_error: Optional[BaseException] = None
    report = None
    try:
        report = run_worker(spec, config.for_rank(0), transport, out_dir, max_states)
    except BaseException as exc:
        master_error = exc
    finally:
        if master_error is not None:
            for p in children:
                if p.poll() is None:
                    p.kill()
        for w in watchers:
            w.join(timeout)
        transport.close()
    if failures:
        raise failures[0]
    if master_error is not None:
        raise master_error

    reports = [report]
    for rank in range(1, n):
        out, _ = outputs.get(rank, ("", ""))
        info = _parse_child_report(out)
        for src, dst, nbytes in info.get("transfers", []):
            transfers.record(src, dst, nbytes)
        child = WorkerReport(rank, info.get("phase1", 0.0), info.get("phase2", 0.0), info.get("phase3", 0.0))
        child.outcome = MergeOutcome(None)
        child.outcome.stats.states_dropped = info.get("states_dropped", 0)
        child.outcome.stats.edges_dropped = info.get("edges_dropped", 0)
        reports.append(child)
    total = time.perf_counter() - t_start
    return ParallelResult(report.outcome.graph, _profile(report, total, transfers, reports), transfers, reports)


def _parse_child_report(stdout: str) -> dict:
    for line in reversed(stdout.strip().splitlines()):
        if line.startswith("{"):
            return json.loads(line)
    return {}


def _child_error(rank: int, stderr: str) -> WorkerError:
    for line in reversed(stderr.strip().splitlines()):
        if line.startswith(f"rank {rank} failed in "):
            phase, _, msg = line[len(f"rank {rank} failed in ") :].partition(": ")
            return WorkerError(rank, phase, msg)
    tail = stderr.strip().splitlines()[-1] if stderr.strip() else "exited without diagnostic"
    return WorkerError(rank, "startup", tail)


def child_report(report: WorkerReport, transfers: Sequence[Transfer]) -> str:
    """One JSON line a child process prints for the launcher."""
    stats = report.outcome.stats if report.outcome is not None else None
    return json.dumps(
        {
            "rank": report.rank,
            "phase1": report.phase1,
            "phase2": report.phase2,
            "phase3": report.phase3,
            "partial_states": report.partial_states,
            "partial_edges": report.partial_edges,
            "states_dropped": stats.states_dropped if stats else 0,
            "edges_dropped": stats.edges_dropped if stats else 0,
            "transfers": [[t.src, t.dst, t.nbytes] for t in transfers],
        }
    )
