import threading
import time

import pytest

from agcluster.transport import (
    MemoryMesh,
    SocketTransport,
    TransferLog,
    TransportError,
    format_endpoints,
    open_listeners,
    parse_endpoints,
)


def socket_mesh(n, timeout=10.0):
    listeners = open_listeners(n)
    endpoints = [s.getsockname()[:2] for s in listeners]
    log = TransferLog()
    return [SocketTransport(r, endpoints, listeners[r], log, timeout) for r in range(n)], log


@pytest.fixture(params=["memory", "socket"])
def mesh3(request):
    if request.param == "memory":
        m = MemoryMesh(3, timeout=10)
        yield [m.endpoint(r) for r in range(3)], m.log
    else:
        ts, log = socket_mesh(3)
        yield ts, log
        for t in ts:
            t.close()


def test_in_order_per_pair(mesh3):
    ts, log = mesh3
    for i in range(20):
        ts[1].send(0, bytes([i]) * (i + 1))
    assert [ts[0].recv(1) for _ in range(20)] == [bytes([i]) * (i + 1) for i in range(20)]
    assert log.messages == 20
    assert log.nbytes == sum(range(1, 21))
    assert {(t.src, t.dst) for t in log.into(0)} == {(1, 0)}


def test_concurrent_recv_from_distinct_sources(mesh3):
    ts, _ = mesh3
    got = {}

    def rx(src):
        got[src] = ts[0].recv(src)

    threads = [threading.Thread(target=rx, args=(s,)) for s in (1, 2)]
    for t in threads:
        t.start()
    ts[2].send(0, b"from-2")
    ts[1].send(0, b"from-1")
    for t in threads:
        t.join(5)
    assert got == {1: b"from-1", 2: b"from-2"}


def test_large_and_empty_frames(mesh3):
    ts, _ = mesh3
    big = bytes(range(256)) * 20000
    got = []
    rx = threading.Thread(target=lambda: got.extend([ts[1].recv(2), ts[1].recv(2)]))
    rx.start()
    ts[2].send(1, big)
    ts[2].send(1, b"")
    rx.join(10)
    assert got == [big, b""]


def test_invalid_peer(mesh3):
    ts, _ = mesh3
    with pytest.raises(TransportError):
        ts[0].send(0, b"x")
    with pytest.raises(TransportError):
        ts[0].recv(5)


def test_recv_timeout(mesh3):
    ts, _ = mesh3
    t0 = time.monotonic()
    with pytest.raises(TransportError):
        ts[0].recv(1, timeout=0.2)
    assert time.monotonic() - t0 < 5


def test_abort_unblocks_recv(mesh3):
    ts, _ = mesh3
    ev = threading.Event()
    ts[0].abort_event = ev
    threading.Timer(0.1, ev.set).start()
    with pytest.raises(TransportError, match="aborted"):
        ts[0].recv(2, timeout=10)


def test_endpoint_text_round_trip():
    eps = [("127.0.0.1", 4000), ("127.0.0.1", 4001)]
    assert parse_endpoints(format_endpoints(eps)) == eps
    with pytest.raises(ValueError):
        parse_endpoints("nohost")
