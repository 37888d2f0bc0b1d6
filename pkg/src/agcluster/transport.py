"""Point-to-point byte transports between worker ranks.

Both implementations deliver messages reliably and in order per
(src, dst) pair, and allow concurrent ``recv`` from distinct sources.
Every completed ``send`` is recorded in a :class:`TransferLog` so message
counts can be asserted.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Optional, Sequence

_FRAME = struct.Struct("<Q")
_HELLO = struct.Struct("<4sI")
_HELLO_MAGIC = b"AGTP"

DEFAULT_TIMEOUT = 300.0
_POLL = 0.05


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class Transfer:
    src: int
    dst: int
    nbytes: int


class TransferLog:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.transfers: list[Transfer] = []

    def record(self, src: int, dst: int, nbytes: int) -> None:
        with self._lock:
            self.transfers.append(Transfer(src, dst, nbytes))

    @property
    def messages(self) -> int:
        return len(self.transfers)

    @property
    def nbytes(self) -> int:
        return sum(t.nbytes for t in self.transfers)

    def into(self, rank: int) -> list[Transfer]:
        return [t for t in self.transfers if t.dst == rank]


class Transport:
    rank: int
    comm_sz: int
    log: TransferLog
    abort_event: Optional[threading.Event] = None

    def send(self, dst: int, data: bytes) -> None:
        raise NotImplementedError

    def recv(self, src: int, timeout: Optional[float] = None) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _check_peer(self, peer: int) -> None:
        if not 0 <= peer < self.comm_sz or peer == self.rank:
            raise TransportError(f"rank {self.rank}: invalid peer rank {peer}")

    def _check_abort(self) -> None:
        if self.abort_event is not None and self.abort_event.is_set():
            raise TransportError(f"rank {self.rank}: run aborted by a failed peer")


class MemoryMesh:
    """Channel mesh for workers that are thread groups in one process."""

    def __init__(self, comm_sz: int, timeout: float = DEFAULT_TIMEOUT):
        self.comm_sz = comm_sz
        self.timeout = timeout
        self.log = TransferLog()
        self._channels = {
            (s, d): queue.SimpleQueue() for s in range(comm_sz) for d in range(comm_sz) if s != d
        }

    def endpoint(self, rank: int) -> "MemoryTransport":
        return MemoryTransport(self, rank)


class MemoryTransport(Transport):
    def __init__(self, mesh: MemoryMesh, rank: int):
        self.mesh = mesh
        self.rank = rank
        self.comm_sz = mesh.comm_sz
        self.log = mesh.log

    def send(self, dst: int, data: bytes) -> None:
        self._check_peer(dst)
        self.mesh._channels[(self.rank, dst)].put(bytes(data))
        self.log.record(self.rank, dst, len(data))

    def recv(self, src: int, timeout: Optional[float] = None) -> bytes:
        self._check_peer(src)
        deadline = time.monotonic() + (timeout or self.mesh.timeout)
        channel = self.mesh._channels[(src, self.rank)]
        while True:
            self._check_abort()
            try:
                return channel.get(timeout=_POLL)
            except queue.Empty:
                if time.monotonic() > deadline:
                    raise TransportError(f"rank {self.rank}: timed out waiting for rank {src}") from None


def open_listeners(n: int, host: str = "127.0.0.1") -> list[socket.socket]:
    out = []
    for _ in range(n):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((host, 0))
        s.listen(64)
        out.append(s)
    return out


def parse_endpoints(text: str) -> list[tuple[str, int]]:
    """``host:port,host:port,...`` indexed by rank."""
    out = []
    for item in text.split(","):
        host, _, port = item.strip().rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad endpoint {item!r}; expected host:port")
        out.append((host, int(port)))
    return out


def format_endpoints(endpoints: Sequence[tuple[str, int]]) -> str:
    return ",".join(f"{h}:{p}" for h, p in endpoints)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], min(n - got, 1 << 22))
        if k == 0:
            raise TransportError("connection closed mid-frame")
        got += k
    return bytes(buf)


class SocketTransport(Transport):
    """Loopback stream sockets, one connection per (src, dst) pair.

    The sender opens the connection and announces its rank; every message
    is a frame of u64 payload length followed by the payload.
    """

    def __init__(
        self,
        rank: int,
        endpoints: Sequence[tuple[str, int]],
        listener: Optional[socket.socket] = None,
        log: Optional[TransferLog] = None,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        self.rank = rank
        self.comm_sz = len(endpoints)
        self.endpoints = list(endpoints)
        self.timeout = timeout
        self.log = log if log is not None else TransferLog()
        if listener is None:
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            listener.bind(self.endpoints[rank])
            listener.listen(64)
        self._listener = listener
        self._incoming: dict[int, socket.socket] = {}
        self._outgoing: dict[int, socket.socket] = {}
        self._cond = threading.Condition()
        self._send_locks = {d: threading.Lock() for d in range(self.comm_sz)}
        self._recv_locks = {s: threading.Lock() for s in range(self.comm_sz)}
        self._closed = False
        self._acceptor = threading.Thread(target=self._accept_loop, name=f"accept-r{rank}", daemon=True)
        self._acceptor.start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            try:
                conn.settimeout(self.timeout)
                magic, src = _HELLO.unpack(_recv_exact(conn, _HELLO.size))
            except (OSError, TransportError, struct.error):
                conn.close()
                continue
            if magic != _HELLO_MAGIC or not 0 <= src < self.comm_sz:
                conn.close()
                continue
            with self._cond:
                self._incoming[src] = conn
                self._cond.notify_all()

    def _connect(self, dst: int) -> socket.socket:
        deadline = time.monotonic() + self.timeout
        delay = 0.01
        while True:
            try:
                sock = socket.create_connection(self.endpoints[dst], timeout=self.timeout)
                break
            except OSError as exc:
                if time.monotonic() > deadline:
                    raise TransportError(f"rank {self.rank}: cannot connect to rank {dst}: {exc}") from exc
                time.sleep(delay)
                delay = min(delay * 2, 0.5)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.sendall(_HELLO.pack(_HELLO_MAGIC, self.rank))
        return sock

    def send(self, dst: int, data: bytes) -> None:
        self._check_peer(dst)
        with self._send_locks[dst]:
            sock = self._outgoing.get(dst)
            if sock is None:
                sock = self._outgoing[dst] = self._connect(dst)
            try:
                sock.sendall(_FRAME.pack(len(data)))
                sock.sendall(data)
            except OSError as exc:
                raise TransportError(f"rank {self.rank}: send to rank {dst} failed: {exc}") from exc
        self.log.record(self.rank, dst, len(data))

    def recv(self, src: int, timeout: Optional[float] = None) -> bytes:
        self._check_peer(src)
        timeout = timeout or self.timeout
        deadline = time.monotonic() + timeout
        with self._cond:
            while src not in self._incoming:
                self._check_abort()
                if time.monotonic() > deadline:
                    raise TransportError(f"rank {self.rank}: no connection from rank {src} within {timeout}s")
                self._cond.wait(_POLL)
            conn = self._incoming[src]
        with self._recv_locks[src]:
            try:
                (n,) = _FRAME.unpack(_recv_exact(conn, _FRAME.size))
                return _recv_exact(conn, n)
            except (OSError, TransportError) as exc:
                raise TransportError(f"rank {self.rank}: receive from rank {src} failed: {exc}") from exc

    def close(self) -> None:
        self._closed = True
        try:
            self._listener.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._listener.close()
        except OSError:
            pass
        for sock in list(self._outgoing.values()) + list(self._incoming.values()):
            try:
                sock.close()
            except OSError:
                pass
