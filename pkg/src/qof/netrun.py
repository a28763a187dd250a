"""Run a cluster of parties over real TCP sockets on one host.

Each party gets its own listening socket, reader threads and a
:class:`RealtimeLoop`, so parties share nothing but the network. Time is
wall-clock milliseconds from a common origin, which keeps the traces of
different parties comparable.
"""

from __future__ import annotations

import logging
import random
import socket
import threading
import time
from dataclasses import dataclass, field

from qof.core import KeyMaterial, Transaction
from qof.engine import BaselineParty, QofParty
from qof.harness.metrics import MetricsReport, compute_metrics
from qof.harness.scenario import Scenario
from qof.runtime import RealtimeRuntime
from qof.transport import RealtimeLoop, TcpTransport

log = logging.getLogger(__name__)


@dataclass
class TcpResult:
    traces: list
    metrics: MetricsReport
    completed: bool
    wall_seconds: float
    logs: dict = field(default_factory=dict)


def free_ports(count: int, host: str = "127.0.0.1") -> list[int]:
    socks = []
    try:
        for _ in range(count):
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def run_tcp_cluster(
    scenario: Scenario,
    protocol: str = "qof",
    host: str = "127.0.0.1",
    ports: list[int] | None = None,
    timeout: float = 60.0,
    abc_timeout: float = 250.0,
) -> TcpResult:
    """Run ``scenario``'s workload on a fault-free TCP cluster until all of it is delivered."""
    if scenario.faults or scenario.script:
        raise ValueError("the TCP runner takes fault-free, unscripted scenarios")
    cfg = scenario.config
    ports = ports or free_ports(cfg.n, host)
    topology = {p: (host, ports[p]) for p in range(cfg.n)}
    keys = KeyMaterial(cfg.n, seed=scenario.seed, scheme=scenario.signature_scheme)
    t0 = time.monotonic()
    traces: list[dict] = []
    lock = threading.Lock()

    def sink(rec):
        with lock:
            traces.append(rec)

    done = threading.Event()
    delivered = [0] * cfg.n

    def on_deliver_for(p):
        def cb(batch):
            delivered[p] += len(batch.txs)
            if all(d >= scenario.tx_count for d in delivered):
                done.set()
        return cb

    loops, transports, parties = [], [], []
    for p in range(cfg.n):
        loop = RealtimeLoop(name=f"party-{p}", t0=t0)
        holder: dict = {}
        transport = TcpTransport(p, topology, keys, lambda s, b, h=holder, lp=loop: lp.post(h["party"].handle, s, b))
        rt = RealtimeRuntime(p, cfg, keys, transport, loop, sink)
        if protocol == "qof":
            party = QofParty(rt, on_deliver_for(p), abc_timeout=abc_timeout)
        else:
            party = BaselineParty(rt, on_deliver_for(p), abc_timeout=abc_timeout)
        holder["party"] = party
        loops.append(loop)
        transports.append(transport)
        parties.append(party)
    for tr in transports:
        tr.start()
    for lp in loops:
        lp.start()

    rng = random.Random(f"work:{scenario.seed}")
    gap = 1.0 / scenario.client_rate
    start = time.monotonic()
    for k in range(scenario.tx_count):
        client, seq = k % scenario.n_clients, k // scenario.n_clients
        tx = Transaction(client, seq, rng.randbytes(scenario.payload_size))
        for p in range(cfg.n):
            loops[p].post(parties[p].of_broadcast, tx)
        pause = start + (k + 1) * gap - time.monotonic()
        if pause > 0:
            time.sleep(pause)
    completed = done.wait(timeout)
    for lp in loops:
        lp.stop()
    for tr in transports:
        tr.close()
    wall = time.monotonic() - t0
    with lock:
        snapshot = sorted(traces, key=lambda r: (r["t"], r["party"]))
    metrics = compute_metrics(snapshot, list(range(cfg.n)), protocol=protocol, n=cfg.n, injected=scenario.tx_count)
    logs = {p: [b.ids for b in parties[p].delivered_log] for p in range(cfg.n)}
    return TcpResult(snapshot, metrics, completed, wall, logs)
