"""Authenticated perfect point-to-point links.

Every frame carries ``(from, to, seq, body)`` plus an HMAC-SHA256 tag under
the ordered link secret. Receivers drop frames whose tag fails or whose
``(from, seq)`` was already seen; drops are counted, never raised.

Two backends share :class:`LinkAuthenticator`:

* :class:`SimNetwork` delivers through a discrete-event :class:`Scheduler`
  in virtual milliseconds, with seeded uniform delays and per-party
  sequential processing. Runs are deterministic given (seed, delays).
* :class:`TcpTransport` keeps one persistent connection per ordered pair,
  with 4-byte big-endian length-prefixed frames.
"""

from __future__ import annotations

import hmac
import heapq
import itertools
import json
import logging
import queue
import random
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from qof.core import DecodeError, KeyMaterial, PartyId, decode, decode_uncached, encode

log = logging.getLogger(__name__)

TAG_SIZE = 32


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class LinkMessage:
    sender: PartyId
    to: PartyId
    seq: int
    body: bytes
    tag: bytes

    def header(self) -> bytes:
        return encode((self.sender, self.to, self.seq, self.body))

    def to_frame(self) -> bytes:
        return self.header() + self.tag

    @classmethod
    def from_frame(cls, frame: bytes) -> "LinkMessage":
        if len(frame) < TAG_SIZE:
            raise DecodeError("frame shorter than tag")
        fields = decode_uncached(frame[:-TAG_SIZE])
        if not (isinstance(fields, tuple) and len(fields) == 4):
            raise DecodeError("bad link header")
        sender, to, seq, body = fields
        if not all(isinstance(x, int) for x in (sender, to, seq)) or not isinstance(body, bytes):
            raise DecodeError("bad link header")
        return cls(sender, to, seq, body, frame[-TAG_SIZE:])


@dataclass
class LinkStats:
    sent: int = 0
    delivered: int = 0
    dropped_mac: int = 0
    dropped_dup: int = 0
    dropped_malformed: int = 0


class LinkAuthenticator:
    """Authenticate-and-filter state for one party."""

    def __init__(self, me: PartyId, keys: KeyMaterial):
        self.me = me
        self.keys = keys
        self._next_seq: dict[PartyId, int] = {}
        self._seen: dict[PartyId, set] = {}
        self.stats = LinkStats()

    def seal(self, to: PartyId, body: bytes) -> bytes:
        if not 0 <= to < self.keys.n:
            raise TopologyError(f"unknown destination {to}")
        seq = self._next_seq.get(to, 0)
        self._next_seq[to] = seq + 1
        header = encode((self.me, to, seq, body))
        tag = hmac.digest(self.keys.link_secret(self.me, to), header, "sha256")
        self.stats.sent += 1
        return header + tag

    def open(self, frame: bytes) -> tuple[PartyId, bytes] | None:
        try:
            msg = LinkMessage.from_frame(frame)
        except DecodeError:
            self.stats.dropped_malformed += 1
            return None
        if msg.to != self.me or not 0 <= msg.sender < self.keys.n:
            self.stats.dropped_mac += 1
            return None
        expected = hmac.digest(self.keys.link_secret(msg.sender, self.me), frame[:-TAG_SIZE], "sha256")
        if not hmac.compare_digest(expected, msg.tag):
            self.stats.dropped_mac += 1
            return None
        seen = self._seen.setdefault(msg.sender, set())
        if msg.seq in seen:
            self.stats.dropped_dup += 1
            return None
        seen.add(msg.seq)
        self.stats.delivered += 1
        return msg.sender, msg.body


# --------------------------------------------------------------------------
# discrete-event simulation


class Timer:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class Scheduler:
    """Global virtual-time event queue. Ties break by insertion order."""

    def __init__(self):
        self.now = 0.0
        self._queue: list = []
        self._counter = itertools.count()
        self.processed = 0

    def at(self, when: float, fn: Callable, *args) -> Timer:
        timer = Timer()
        heapq.heappush(self._queue, (max(when, self.now), next(self._counter), timer, fn, args))
        return timer

    def after(self, delay: float, fn: Callable, *args) -> Timer:
        return self.at(self.now + delay, fn, *args)

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        while self._queue:
            when, _, timer, fn, args = heapq.heappop(self._queue)
            if timer.cancelled:
                continue
            self.now = when
            self.processed += 1
            fn(*args)
            return True
        return False

    def run(self, until: float | None = None, max_events: int | None = None) -> None:
        count = 0
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                self.now = until
                return
            if max_events is not None and count >= max_events:
                return
            if self.step():
                count += 1


@dataclass(frozen=True)
class CostModel:
    """Virtual CPU and wire costs in milliseconds."""

    per_message: float = 0.01
    per_byte: float = 8e-6
    sign: float = 0.03
    verify: float = 0.06
    graph_per_pair: float = 2e-4

    @classmethod
    def free(cls) -> "CostModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


Tamper = Callable[[PartyId, PartyId, bytes], list]


@dataclass
class _SimEndpoint:
    party: PartyId
    auth: LinkAuthenticator
    handler: Callable[[PartyId, bytes], None] | None = None
    busy: float = 0.0
    crashed: bool = False
    timers: list = field(default_factory=list)


class SimNetwork:
    """In-memory backend over a :class:`Scheduler`.

    Each party processes one event at a time: an event starts at
    ``max(arrival, busy)`` and its sends depart when the party's local clock
    (``busy``) says so, which is how CPU costs turn into queueing delay.
    Links are FIFO.
    """

    def __init__(
        self,
        keys: KeyMaterial,
        scheduler: Scheduler,
        seed: int = 0,
        delay_range: tuple[float, float] = (0.0, 0.0),
        costs: CostModel | None = None,
        tamper: Tamper | None = None,
    ):
        d_min, d_max = delay_range
        if d_min < 0 or d_min > d_max:
            raise ValueError(f"bad delay range {delay_range}")
        self.keys = keys
        self.scheduler = scheduler
        self.rng = random.Random(seed)
        self.delay_range = (float(d_min), float(d_max))
        self.costs = costs or CostModel()
        self.tamper = tamper
        self._endpoints = [_SimEndpoint(i, LinkAuthenticator(i, keys)) for i in range(keys.n)]
        self._last_arrival: dict[tuple[int, int], float] = {}
        self.bytes_sent = 0

    @property
    def n(self) -> int:
        return len(self._endpoints)

    def attach(self, party: PartyId, handler: Callable[[PartyId, bytes], None]) -> None:
        self._endpoints[party].handler = handler

    def stats(self, party: PartyId) -> LinkStats:
        return self._endpoints[party].auth.stats

    def local_time(self, party: PartyId) -> float:
        ep = self._endpoints[party]
        return max(ep.busy, self.scheduler.now)

    def charge(self, party: PartyId, ms: float) -> None:
        ep = self._endpoints[party]
        ep.busy = max(ep.busy, self.scheduler.now) + ms

    def is_crashed(self, party: PartyId) -> bool:
        return self._endpoints[party].crashed

    def crash(self, party: PartyId) -> None:
        ep = self._endpoints[party]
        ep.crashed = True
        for t in ep.timers:
            t.cancel()
        ep.timers.clear()

    def al_send(self, src: PartyId, dst: PartyId, body: bytes) -> None:
        if not 0 <= dst < self.n:
            raise TopologyError(f"unknown destination {dst}")
        ep = self._endpoints[src]
        if ep.crashed:
            return
        frame = ep.auth.seal(dst, body)
        depart = max(ep.busy, self.scheduler.now)
        frames = [frame] if self.tamper is None else self.tamper(src, dst, frame)
        for fr in frames:
            self._transmit(src, dst, fr, depart)

    def inject(self, src: PartyId, dst: PartyId, frame: bytes, when: float | None = None) -> None:
        """Put a raw frame on the wire, as an attacker with link access would."""
        self._transmit(src, dst, frame, self.scheduler.now if when is None else when)

    def _transmit(self, src, dst, frame, depart):
        self.bytes_sent += len(frame)
        if src == dst:
            arrival = depart
        else:
            lo, hi = self.delay_range
            delay = lo if lo == hi else self.rng.uniform(lo, hi)
            arrival = depart + delay + len(frame) * self.costs.per_byte
            link = (src, dst)
            arrival = max(arrival, self._last_arrival.get(link, 0.0))
            self._last_arrival[link] = arrival
        self.scheduler.at(arrival, self._arrive, dst, frame)

    def _arrive(self, dst: PartyId, frame: bytes) -> None:
        ep = self._endpoints[dst]
        if ep.crashed:
            return
        opened = ep.auth.open(frame)
        if opened is None:
            return
        ep.busy = max(ep.busy, self.scheduler.now) + self.costs.per_message
        if ep.handler is not None:
            ep.handler(*opened)

    def set_timer(self, party: PartyId, delay: float, fn: Callable, *args) -> Timer:
        ep = self._endpoints[party]
        when = max(ep.busy, self.scheduler.now) + delay

        def fire():
            if ep.crashed:
                return
            ep.busy = max(ep.busy, self.scheduler.now)
            fn(*args)

        timer = self.scheduler.at(when, fire)
        ep.timers = [t for t in ep.timers if not t.cancelled]
        ep.timers.append(timer)
        return timer

    def call_soon(self, party: PartyId, fn: Callable, *args) -> Timer:
        return self.set_timer(party, 0.0, fn, *args)


# --------------------------------------------------------------------------
# TCP backend

_LEN = struct.Struct(">I")


def load_topology(path: str | Path) -> dict[int, tuple[str, int]]:
    """Read ``{"0": "host:port", ...}`` (optionally under a ``parties`` key)."""
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict) and "parties" in raw:
        raw = raw["parties"]
    topo: dict[int, tuple[str, int]] = {}
    try:
        for key, addr in raw.items():
            host, _, port = str(addr).rpartition(":")
            topo[int(key)] = (host, int(port))
    except (AttributeError, ValueError) as exc:
        raise TopologyError(f"bad topology file {path}: {exc}") from None
    if sorted(topo) != list(range(len(topo))):
        raise TopologyError("party ids must be 0..n-1")
    return topo


def _recv_exact(sock: socket.socket, size: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < size:
        chunk = sock.recv(size - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


class TcpTransport:
    """Authenticated links over TCP for one party.

    ``on_message(sender, body)`` runs on reader threads; callers that need a
    single event loop should hand messages to a :class:`RealtimeLoop`.
    """

    def __init__(
        self,
        me: PartyId,
        topology: Mapping[int, tuple[str, int]],
        keys: KeyMaterial,
        on_message: Callable[[PartyId, bytes], None],
        connect_timeout: float = 10.0,
    ):
        if me not in topology:
            raise TopologyError(f"party {me} missing from topology")
        self.me = me
        self.topology = dict(topology)
        self.auth = LinkAuthenticator(me, keys)
        self.on_message = on_message
        self.connect_timeout = connect_timeout
        self._auth_lock = threading.Lock()
        self._out: dict[int, socket.socket] = {}
        self._out_locks = {p: threading.Lock() for p in self.topology}
        self._server: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._closed = threading.Event()

    def start(self) -> None:
        host, port = self.topology[self.me]
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(len(self.topology) + 4)
        self._server = srv
        t = threading.Thread(target=self._accept_loop, name=f"tcp-accept-{self.me}", daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self):
        while not self._closed.is_set():
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=self._read_loop, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _read_loop(self, conn: socket.socket):
        with conn:
            while not self._closed.is_set():
                try:
                    head = _recv_exact(conn, 4)
                    if head is None:
                        return
                    frame = _recv_exact(conn, _LEN.unpack(head)[0])
                except OSError:
                    return
                if frame is None:
                    return
                with self._auth_lock:
                    opened = self.auth.open(frame)
                if opened is not None:
                    self.on_message(*opened)

    def _connect(self, to: PartyId) -> socket.socket:
        host, port = self.topology[to]
        deadline = time.monotonic() + self.connect_timeout
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=self.connect_timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return sock
            except OSError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.05)

    def al_send(self, to: PartyId, body: bytes) -> None:
        if to not in self.topology:
            raise TopologyError(f"unknown destination {to}")
        with self._auth_lock:
            frame = self.auth.seal(to, body)
        with self._out_locks[to]:
            sock = self._out.get(to)
            if sock is None:
                sock = self._out[to] = self._connect(to)
            try:
                sock.sendall(_LEN.pack(len(frame)) + frame)
            except OSError:
                # fail-stop peer: drop the connection, message is lost
                self._out.pop(to, None)
                log.debug("party %d: send to %d failed", self.me, to)

    def close(self) -> None:
        self._closed.set()
        if self._server is not None:
            self._server.close()
        for sock in self._out.values():
            try:
                sock.close()
            except OSError:
                pass
        self._out.clear()


class RealtimeLoop:
    """Single-threaded wall-clock event loop with millisecond timers."""

    def __init__(self, name: str = "loop", t0: float | None = None):
        self._inbox: queue.Queue = queue.Queue()
        self._timers: list = []
        self._counter = itertools.count()
        self._t0 = time.monotonic() if t0 is None else t0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)
        self._lock = threading.Lock()

    def now(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0

    def start(self) -> None:
        self._thread.start()

    def post(self, fn: Callable, *args) -> None:
        self._inbox.put((fn, args))

    def call_later(self, delay_ms: float, fn: Callable, *args) -> Timer:
        timer = Timer()
        with self._lock:
            heapq.heappush(self._timers, (self.now() + delay_ms, next(self._counter), timer, fn, args))
        self._inbox.put(None)
        return timer

    def _run(self):
        while not self._stop.is_set():
            with self._lock:
                wait = None
                while self._timers and self._timers[0][0] <= self.now():
                    _, _, timer, fn, args = heapq.heappop(self._timers)
                    if not timer.cancelled:
                        self._inbox.put((fn, args))
                if self._timers:
                    wait = max(0.0, (self._timers[0][0] - self.now()) / 1000.0)
            try:
                item = self._inbox.get(timeout=wait if wait is not None else 0.1)
            except queue.Empty:
                continue
            if item is None:
                continue
            fn, args = item
            try:
                fn(*args)
            except Exception:  # keep the party loop alive; errors surface in logs
                log.exception("event handler failed")

    def stop(self) -> None:
        self._stop.set()
        self._inbox.put(None)
        self._thread.join(timeout=2.0)
