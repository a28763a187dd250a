"""Per-party execution context shared by the protocol modules.

A protocol module only ever talks to its :class:`Runtime`: it sends tuples,
sets timers, charges CPU time and emits trace events. The simulator and the
TCP runner provide concrete runtimes, so protocol code is identical in both.
"""

from __future__ import annotations

import logging
from typing import Callable

from qof.core import Config, KeyMaterial, PartyId, encode
from qof.transport import CostModel, RealtimeLoop, SimNetwork, TcpTransport, Timer

log = logging.getLogger(__name__)

TraceSink = Callable[[dict], None]


class Runtime:
    def __init__(self, me: PartyId, config: Config, keys: KeyMaterial, costs: CostModel | None = None):
        self.me = me
        self.config = config
        self.keys = keys
        self.costs = costs or CostModel.free()

    # transport
    def send(self, to: PartyId, msg: tuple) -> None:
        self.send_raw(to, encode(msg))

    def send_raw(self, to: PartyId, body: bytes) -> None:
        raise NotImplementedError

    def broadcast(self, msg: tuple, include_self: bool = True) -> None:
        body = encode(msg)
        for p in range(self.config.n):
            if include_self or p != self.me:
                self.send_raw(p, body)

    # time
    def now(self) -> float:
        raise NotImplementedError

    def set_timer(self, delay: float, fn: Callable, *args) -> Timer:
        raise NotImplementedError

    def charge(self, ms: float) -> None:
        pass

    # crypto with cost accounting
    def sign(self, message: bytes) -> bytes:
        self.charge(self.costs.sign)
        return self.keys.sign(self.me, message)

    def verify(self, party: PartyId, message: bytes, sig: bytes) -> bool:
        self.charge(self.costs.verify)
        return self.keys.verify(party, message, sig)

    def trace(self, ev: str, **fields) -> None:
        pass


class SimRuntime(Runtime):
    def __init__(
        self,
        me: PartyId,
        config: Config,
        keys: KeyMaterial,
        network: SimNetwork,
        sink: TraceSink | None = None,
    ):
        super().__init__(me, config, keys, network.costs)
        self.network = network
        self.sink = sink

    def send_raw(self, to: PartyId, body: bytes) -> None:
        self.network.al_send(self.me, to, body)

    def now(self) -> float:
        return self.network.local_time(self.me)

    def set_timer(self, delay: float, fn: Callable, *args) -> Timer:
        return self.network.set_timer(self.me, delay, fn, *args)

    def charge(self, ms: float) -> None:
        if ms:
            self.network.charge(self.me, ms)

    def trace(self, ev: str, **fields) -> None:
        if self.sink is not None:
            rec = {"t": round(self.now(), 6), "party": self.me, "ev": ev}
            rec.update(fields)
            self.sink(rec)


class RealtimeRuntime(Runtime):
    """Wall-clock runtime over TCP; every callback runs on ``loop``."""

    def __init__(
        self,
        me: PartyId,
        config: Config,
        keys: KeyMaterial,
        transport: TcpTransport,
        loop: RealtimeLoop,
        sink: TraceSink | None = None,
    ):
        super().__init__(me, config, keys)
        self.transport = transport
        self.loop = loop
        self.sink = sink

    def send_raw(self, to: PartyId, body: bytes) -> None:
        if to == self.me:
            self.loop.post(self._self_deliver, body)
        else:
            self.transport.al_send(to, body)

    def _self_deliver(self, body: bytes) -> None:
        self.transport.on_message(self.me, body)

    def now(self) -> float:
        return self.loop.now()

    def set_timer(self, delay: float, fn: Callable, *args) -> Timer:
        return self.loop.call_later(delay, fn, *args)

    def trace(self, ev: str, **fields) -> None:
        if self.sink is not None:
            rec = {"t": round(self.now(), 3), "party": self.me, "ev": ev}
            rec.update(fields)
            self.sink(rec)
