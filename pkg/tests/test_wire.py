import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agcluster.expand import generate_sequential
from agcluster.graph import CorruptPartialError, PartialGraph, canonical_equal
from agcluster.netmodel import canonical_state_key
from agcluster.wire import WireFormatError, deserialize_partial, peek_header, serialize_partial


def partial_from(g, rank=0):
    p = PartialGraph(g.root, g.checksum, rank)
    p.states, p.edges = dict(g.states), set(g.edges)
    return p


def test_round_trip_fig1(fig1):
    g = generate_sequential(fig1)
    back = deserialize_partial(serialize_partial(g), fig1.checksum())
    assert canonical_equal(back, g)
    assert back.root == g.root


def test_root_only_size(fig1):
    g = PartialGraph(canonical_state_key({0}), 5, 2)
    g.add_state(g.root, (0,))
    data = serialize_partial(g)
    assert len(data) == 26 + 4 * (1 + 1) + 8
    assert data[:4] == b"AGPG"
    assert peek_header(data) == (1, 2, 5, 1)


def test_header_fields(tree32):
    g = generate_sequential(tree32)
    data = serialize_partial(g, owner_rank=3)
    magic, version, owner, checksum, n_states = struct.unpack_from("<4sHIQQ", data)
    assert (magic, version, owner, checksum, n_states) == (b"AGPG", 1, 3, tree32.checksum(), 125)
    (n_edges,) = struct.unpack_from("<Q", data, len(data) - 375 * 20 - 8)
    assert n_edges == 375


def test_serialization_deterministic(tree32):
    g = generate_sequential(tree32)
    assert serialize_partial(g) == serialize_partial(deserialize_partial(serialize_partial(g)))


def test_checksum_mismatch(fig1):
    data = serialize_partial(generate_sequential(fig1))
    with pytest.raises(WireFormatError):
        deserialize_partial(data, fig1.checksum() ^ 1)


def test_truncated(fig1):
    data = serialize_partial(generate_sequential(fig1))
    for cut in (3, 20, len(data) - 1):
        with pytest.raises((WireFormatError, CorruptPartialError)):
            deserialize_partial(data[:cut])


def test_bad_magic(fig1):
    data = bytearray(serialize_partial(generate_sequential(fig1)))
    data[0:4] = b"XXXX"
    with pytest.raises(WireFormatError):
        deserialize_partial(bytes(data))


def test_edge_index_out_of_range(fig1):
    data = bytearray(serialize_partial(generate_sequential(fig1)))
    # last edge's dst index
    struct.pack_into("<Q", data, len(data) - 12, 99)
    with pytest.raises(CorruptPartialError):
        deserialize_partial(bytes(data))


def test_unsorted_facts_rejected():
    g = PartialGraph(canonical_state_key({0}), 1)
    g.add_state(g.root, (0,))
    g.add_state(canonical_state_key({0, 1}), (0, 1))
    data = bytearray(serialize_partial(g))
    # the second state record is count, 0, 1: swap the ids
    off = 26 + 8
    struct.pack_into("<II", data, off + 4, 1, 0)
    with pytest.raises((WireFormatError, CorruptPartialError)):
        deserialize_partial(bytes(data))


fact_sets = st.sets(st.frozensets(st.integers(1, 40), max_size=6), min_size=0, max_size=30)


@settings(max_examples=50, deadline=None)
@given(fact_sets, st.randoms(use_true_random=False))
def test_random_partials_round_trip(sets, rnd):
    root = (0,)
    g = PartialGraph(canonical_state_key(root), 1234, 1)
    g.add_state(g.root, root)
    keys = [g.root]
    for s in sets:
        facts = tuple(sorted(s | {0}))
        k = canonical_state_key(facts)
        g.add_state(k, facts)
        keys.append(k)
    for _ in range(len(keys) * 2):
        a, b = rnd.choice(keys), rnd.choice(keys)
        if a != b:
            g.add_edge(a, b, rnd.randint(0, 9))
    back = deserialize_partial(serialize_partial(g), 1234)
    assert canonical_equal(back, g)
    assert back.owner_rank == 1
