"""Binary wire format for partial graphs ("AGPG").

Layout, all integers little-endian fixed width::

    magic      4s   b"AGPG"
    version    u16
    owner      u32
    checksum   u64   spec checksum (fact catalog + exploit table)
    n_states   u64
    states     n_states x (u32 fact count, count x u32 fact id)
    n_edges    u64
    edges      n_edges x (u64 src index, u64 dst index, u32 exploit id)

The root state is always state 0; the remaining states follow in ascending
StateKey order. Edges reference states by index into this message's table
and are sorted by (src, dst, exploit).
"""

from __future__ import annotations

import operator
import struct
from operator import itemgetter
from typing import Optional

import numpy as np

from .graph import CorruptPartialError, GraphStore, PartialGraph, StateRecord
from .netmodel import key_of_packed

MAGIC = b"AGPG"
VERSION = 1

_HEADER = struct.Struct("<4sHIQQ")
_COUNT = struct.Struct("<Q")
EDGE_DTYPE = np.dtype([("src", "<u8"), ("dst", "<u8"), ("exploit", "<u4")])


class WireFormatError(ValueError):
    pass


def serialize_partial(g: GraphStore, owner_rank: Optional[int] = None) -> bytes:
    if owner_rank is None:
        owner_rank = getattr(g, "owner_rank", 0)
    root = g.states.get(g.root)
    if root is None:
        raise CorruptPartialError("graph has no root state")
    ordered = [root]
    ordered.extend(g.states[k] for k in sorted(g.states) if k != g.root)
    index = {rec.key: i for i, rec in enumerate(ordered)}

    flat: list[int] = []
    for rec in ordered:
        flat.append(len(rec.facts))
        flat.extend(rec.facts)
    state_bytes = np.asarray(flat, dtype="<u4").tobytes()

    n_edges = len(g.edges)
    edges = np.empty(n_edges, dtype=EDGE_DTYPE)
    if n_edges:
        edge_list = list(g.edges)
        lookup = index.__getitem__
        try:
            src = np.array(list(map(lookup, map(itemgetter(0), edge_list))), dtype=np.uint64)
            dst = np.array(list(map(lookup, map(itemgetter(1), edge_list))), dtype=np.uint64)
        except KeyError as exc:
            raise CorruptPartialError(f"edge endpoint {exc.args[0]:x} not in state table") from None
        exp = np.array(list(map(itemgetter(2), edge_list)), dtype=np.uint32)
        order = np.lexsort((exp, dst, src))
        edges["src"] = src[order]
        edges["dst"] = dst[order]
        edges["exploit"] = exp[order]

    return b"".join(
        (
            _HEADER.pack(MAGIC, VERSION, owner_rank, g.checksum, len(ordered)),
            state_bytes,
            _COUNT.pack(n_edges),
            edges.tobytes(),
        )
    )


def peek_header(data: bytes) -> tuple[int, int, int, int]:
    """(version, owner rank, checksum, state count) without decoding the body."""
    if len(data) < _HEADER.size:
        raise WireFormatError("message shorter than header")
    magic, version, owner, checksum, n_states = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise WireFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise WireFormatError(f"unsupported format version {version}")
    return version, owner, checksum, n_states


def deserialize_partial(data: bytes, expected_checksum: Optional[int] = None) -> PartialGraph:
    _, owner, checksum, n_states = peek_header(data)
    if expected_checksum is not None and checksum != expected_checksum:
        raise WireFormatError(f"catalog checksum mismatch: got {checksum:016x}, expected {expected_checksum:016x}")
    if n_states == 0:
        raise CorruptPartialError("message has no states (root missing)")
    off = _HEADER.size
    words_avail = (len(data) - off) // 4
    words = np.frombuffer(data, dtype="<u4", count=words_avail, offset=off).tolist()

    facts_list = []
    spans = []
    i = 0
    try:
        for _ in range(n_states):
            c = words[i]
            facts_list.append(tuple(words[i + 1 : i + 1 + c]))
            spans.append((i + 1, c))
            i += 1 + c
            if i > words_avail:
                raise IndexError
    except IndexError:
        raise WireFormatError("truncated state table") from None
    body = memoryview(data)[_HEADER.size :]
    off += 4 * i
    if len(data) < off + _COUNT.size:
        raise WireFormatError("truncated before edge count")
    (n_edges,) = _COUNT.unpack_from(data, off)
    off += _COUNT.size
    if len(data) != off + n_edges * EDGE_DTYPE.itemsize:
        raise WireFormatError("edge table length does not match edge count")
    edges = np.frombuffer(data, dtype=EDGE_DTYPE, count=n_edges, offset=off)

    for f in facts_list:
        if not all(map(operator.lt, f, f[1:])):
            raise WireFormatError(f"state facts not strictly ascending: {f}")
    # the wire bytes of a state are exactly its sorted u32-LE fact ids, so the
    # key is hashed straight from the message
    keys = [key_of_packed(body[4 * a : 4 * (a + c)]) for a, c in spans]
    g = PartialGraph(keys[0], checksum, owner)
    g.states = {k: StateRecord(k, f, i) for i, (k, f) in enumerate(zip(keys, facts_list))}
    if len(g.states) != n_states:
        raise CorruptPartialError("duplicate states in message")
    if n_edges:
        if int(edges["src"].max()) >= n_states or int(edges["dst"].max()) >= n_states:
            raise CorruptPartialError("edge references a state index outside the message")
        lookup = keys.__getitem__
        g.edges = set(
            zip(
                map(lookup, edges["src"].tolist()),
                map(lookup, edges["dst"].tolist()),
                edges["exploit"].tolist(),
            )
        )
    return g
