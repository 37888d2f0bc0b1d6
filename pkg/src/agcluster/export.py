"""Graph exports: DOT, dense edge list, and a one-line summary."""

from __future__ import annotations

import os
import sys
from typing import TextIO

from .graph import GraphStore
from .wire import serialize_partial

FORMATS = ("dot", "edges", "summary")


def dense_ids(g: GraphStore) -> dict[int, int]:
    """StateKey -> dense id, in the graph's first-seen (local id) order."""
    return {rec.key: i for i, rec in enumerate(g.state_list())}


def _sorted_edges(g: GraphStore, ids: dict[int, int]) -> list[tuple[int, int, int]]:
    return sorted((ids[s], ids[d], e) for s, d, e in g.edges)


def write_dot(g: GraphStore, fh: TextIO, spec=None) -> None:
    spec = spec if spec is not None else getattr(g, "spec", None)
    ids = dense_ids(g)
    fh.write("digraph attack_graph {\n")
    fh.write("  node [shape=box];\n")
    for rec in g.state_list():
        if spec is not None:
            label = "\\n".join(spec.decode(rec.facts))
        else:
            label = ",".join(map(str, rec.facts))
        attrs = f'label="{_escape(label)}"'
        if rec.key == g.root:
            attrs += ", peripheries=2"
        fh.write(f"  s{ids[rec.key]} [{attrs}];\n")
    for s, d, e in _sorted_edges(g, ids):
        label = spec.exploits[e].label if spec is not None else str(e)
        fh.write(f'  s{s} -> s{d} [label="{_escape(label)}"];\n')
    fh.write("}\n")


def _escape(s: str) -> str:
    return s.replace('"', '\\"')


def write_edges(g: GraphStore, fh: TextIO) -> None:
    for s, d, e in _sorted_edges(g, dense_ids(g)):
        fh.write(f"{s} {d} {e}\n")


def summary_line(g: GraphStore) -> str:
    size = len(serialize_partial(g, 0))
    return f"states: {g.n_states}, edges: {g.n_edges}, serialized bytes: {size}"


def memory_estimate(g: GraphStore) -> int:
    """Rough in-memory footprint in bytes, extrapolated from one state and one edge."""
    size = sys.getsizeof(g.states) + sys.getsizeof(g.edges)
    if g.states:
        rec = g.states[g.root]
        size += len(g.states) * (sys.getsizeof(rec) + sys.getsizeof(rec.facts) + sys.getsizeof(rec.key))
    if g.edges:
        src, dst, eid = next(iter(g.edges))
        # edge endpoints share the state's key objects only after a merge, so count them
        size += len(g.edges) * (sys.getsizeof((src, dst, eid)) + sys.getsizeof(src) + sys.getsizeof(dst))
    return size


def export_graph(g: GraphStore, fmt: str, path: os.PathLike, spec=None) -> None:
    if fmt not in FORMATS:
        raise ValueError(f"unknown export format {fmt!r}; choose from {', '.join(FORMATS)}")
    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "dot":
            write_dot(g, fh, spec)
        elif fmt == "edges":
            write_edges(g, fh)
        else:
            fh.write(summary_line(g) + "\n")
