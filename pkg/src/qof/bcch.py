"""FIFO Byzantine consistent broadcast channel built from signed echo broadcast.

Each sender runs instances 0, 1, 2, ... one at a time:

    SEND(r, m)        sender -> all
    ECHO(r, d, sig)   receiver -> sender, sig over (sender, r, d), d = H(m)
    FINAL(s, r, m, C) sender -> all, C = echo certificate with a quorum

A receiver echoes at most one message per instance. Two quorums of size
``floor((n + f) / 2) + 1`` share a correct party, so at most one message per
instance can ever be certified. FINALs are delivered per sender in instance
order; out-of-order ones are buffered within a window. Delivered instances
keep their certificate so they can be handed to parties that missed them.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

from qof.core import Config, KeyMaterial, PartyId, digest, encode
from qof.runtime import Runtime

SEND = "SEND"
ECHO = "ECHO"
FINAL = "FINAL"
REQUEST = "REQ"

DEFAULT_WINDOW = 64


@dataclass(frozen=True)
class BcchMessage:
    message: bytes
    round: int
    from_process: PartyId
    id: str


def echo_statement(sender: PartyId, rnd: int, dig: bytes) -> bytes:
    return encode(("bcch-echo", sender, rnd, dig))


@dataclass(frozen=True)
class EchoCertificate:
    sender: PartyId
    round: int
    digest: bytes
    signatures: tuple  # ((party, sig), ...)

    def to_wire(self) -> tuple:
        return (self.sender, self.round, self.digest, tuple(self.signatures))

    @classmethod
    def from_wire(cls, wire) -> "EchoCertificate":
        sender, rnd, dig, sigs = wire
        return cls(sender, rnd, dig, tuple((p, s) for p, s in sigs))

    def validate(self, keys: KeyMaterial, config: Config, charge: Callable[[int], None] | None = None) -> bool:
        signers = [p for p, _ in self.signatures]
        if len(set(signers)) != len(signers):
            return False
        if len(signers) < config.echo_quorum:
            return False
        stmt = echo_statement(self.sender, self.round, self.digest)
        if charge is not None:
            charge(len(signers))
        return all(
            isinstance(p, int) and 0 <= p < config.n and keys.verify(p, stmt, s)
            for p, s in self.signatures
        )


class BcchChannel:
    """One party's endpoint: its own sending channel plus receiving state for all senders."""

    def __init__(
        self,
        rt: Runtime,
        on_deliver: Callable[[BcchMessage], None],
        is_valid: Callable[[bytes], bool] = lambda m: True,
        window: int = DEFAULT_WINDOW,
        max_queue: int = 1 << 20,
    ):
        self.rt = rt
        self.on_deliver = on_deliver
        self.is_valid = is_valid
        self.window = window
        self.max_queue = max_queue
        n = rt.config.n
        # sending side
        self.queue: deque = deque()
        self.next_round = 0
        self.active = None  # (round, message, digest, {party: sig})
        # receiving side
        self.echoed: dict[tuple[int, int], bytes] = {}
        self.next_deliver = [0] * n
        self.buffered: dict[tuple[int, int], tuple[bytes, EchoCertificate]] = {}
        self.store: dict[tuple[int, int], tuple[bytes, EchoCertificate]] = {}
        self.dropped = 0

    # -- sender

    def broadcast(self, message: bytes) -> bool:
        """Queue ``message`` on this party's channel; False signals backpressure."""
        if len(self.queue) >= self.max_queue:
            return False
        self.queue.append(message)
        if self.active is None:
            self._start_next()
        return True

    @property
    def backlog(self) -> int:
        return len(self.queue) + (self.active is not None)

    def _start_next(self) -> None:
        if not self.queue:
            return
        message = self.queue.popleft()
        rnd = self.next_round
        self.next_round += 1
        self.active = (rnd, message, digest(message), {})
        self.rt.broadcast(("B", SEND, rnd, message))

    def _on_echo(self, src: PartyId, rnd: int, dig: bytes, sig: bytes) -> None:
        if self.active is None:
            return
        arnd, message, adig, echoes = self.active
        if rnd != arnd or dig != adig or src in echoes:
            return
        if not self.rt.verify(src, echo_statement(self.rt.me, rnd, dig), sig):
            self.dropped += 1
            return
        echoes[src] = sig
        if len(echoes) >= self.rt.config.echo_quorum:
            sigs = tuple(sorted(echoes.items()))[: self.rt.config.echo_quorum]
            cert = EchoCertificate(self.rt.me, rnd, dig, sigs)
            self.active = None
            self.rt.broadcast(("B", FINAL, self.rt.me, rnd, message, cert.to_wire()))
            self._start_next()

    # -- receiver

    def _on_send(self, src: PartyId, rnd: int, message: bytes) -> None:
        key = (src, rnd)
        if key in self.echoed or rnd < self.next_deliver[src]:
            return
        if not self.is_valid(message):
            self.dropped += 1
            return
        dig = digest(message)
        self.echoed[key] = dig
        sig = self.rt.sign(echo_statement(src, rnd, dig))
        self.rt.send(src, ("B", ECHO, rnd, dig, sig))

    def _on_final(self, sender: PartyId, rnd: int, message: bytes, cert_wire) -> None:
        if not 0 <= sender < self.rt.config.n:
            self.dropped += 1
            return
        key = (sender, rnd)
        nxt = self.next_deliver[sender]
        if rnd < nxt or key in self.buffered:
            return
        if rnd >= nxt + self.window:
            self.dropped += 1
            return
        try:
            cert = EchoCertificate.from_wire(cert_wire)
        except (TypeError, ValueError):
            self.dropped += 1
            return
        if cert.sender != sender or cert.round != rnd or cert.digest != digest(message):
            self.dropped += 1
            return
        if not self.is_valid(message):
            self.dropped += 1
            return
        if not cert.validate(self.rt.keys, self.rt.config, self._charge_verify):
            self.dropped += 1
            return
        self.buffered[key] = (message, cert)
        self._drain(sender)

    def _charge_verify(self, count: int) -> None:
        self.rt.charge(self.rt.costs.verify * count)

    def _drain(self, sender: PartyId) -> None:
        while True:
            key = (sender, self.next_deliver[sender])
            entry = self.buffered.pop(key, None)
            if entry is None:
                return
            self.store[key] = entry
            self.next_deliver[sender] += 1
            message = entry[0]
            self.on_deliver(BcchMessage(message, key[1], sender, digest(message).hex()))

    # -- transfers of certified instances

    def request(self, sender: PartyId, lo: int, hi: int) -> None:
        """Ask every party for instances ``lo..hi-1`` of ``sender``'s channel."""
        self.rt.broadcast(("B", REQUEST, sender, lo, hi), include_self=False)

    def _on_request(self, src: PartyId, sender: PartyId, lo: int, hi: int) -> None:
        hi = min(hi, lo + self.window)
        for rnd in range(max(lo, 0), hi):
            entry = self.store.get((sender, rnd))
            if entry is None:
                break
            message, cert = entry
            self.rt.send(src, ("B", FINAL, sender, rnd, message, cert.to_wire()))

    def certified(self, sender: PartyId, rnd: int) -> tuple[bytes, EchoCertificate] | None:
        return self.store.get((sender, rnd))

    # -- dispatch

    def handle(self, src: PartyId, msg: tuple) -> None:
        kind = msg[1]
        try:
            if kind == SEND:
                _, _, rnd, message = msg
                self._on_send(src, rnd, message)
            elif kind == ECHO:
                _, _, rnd, dig, sig = msg
                self._on_echo(src, rnd, dig, sig)
            elif kind == FINAL:
                _, _, sender, rnd, message, cert = msg
                self._on_final(sender, rnd, message, cert)
            elif kind == REQUEST:
                _, _, sender, lo, hi = msg
                self._on_request(src, sender, lo, hi)
            else:
                self.dropped += 1
        except (TypeError, ValueError, IndexError, KeyError):
            self.dropped += 1
