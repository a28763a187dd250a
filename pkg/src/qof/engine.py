"""The per-party QOF round engine.

A party of-broadcasts transactions on its own bcch channel and logs what it
bcch-delivers per sender. A round runs in four phases:

``STATUS``    sign the local vector clock and collect n-f signed clocks
``DECIDING``  vbc-propose the clock matrix and wait for the decided one
``FETCH``     compute the cut and pull missing certified instances
``IDLE``      after the graph phase has emitted its delivery batches

Rounds start when enough transactions lie beyond the last cut, or when f+1
parties (hence at least one correct one) already moved to the next round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

from qof.bcch import BcchChannel, BcchMessage
from qof.core import DecodeError, PartyId, Transaction, decode
from qof.fairgraph import RoundGraph, fair_order
from qof.runtime import Runtime
from qof.vbc import ClockMatrix, SequencerABC, ValidatedConsensus, predicate_P, status_statement

log = logging.getLogger(__name__)

IDLE, STATUS, DECIDING, FETCH = "idle", "status", "deciding", "fetch"

STATUS_WINDOW = 8


@dataclass(frozen=True)
class Cut:
    values: tuple
    round: int

    def __getitem__(self, j: int) -> int:
        return self.values[j]

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class DeliveredBatch:
    round: int
    seq: int
    txs: tuple  # Transactions sorted by id

    def __post_init__(self):
        if not self.txs:
            raise ValueError("a delivered batch cannot be empty")

    @property
    def ids(self) -> tuple:
        return tuple(tx.id for tx in self.txs)


def compute_cut(L_prime: ClockMatrix | Sequence[Sequence[int]], f: int, n: int | None = None) -> tuple:
    """Per column, the largest value reached by more than ``f`` rows (0 if none)."""
    rows = [c for _, c, _ in L_prime.rows] if isinstance(L_prime, ClockMatrix) else [list(r) for r in L_prime]
    if n is None:
        n = len(rows[0]) if rows else 0
    cut = []
    for j in range(n):
        column = sorted((r[j] for r in rows), reverse=True)
        cut.append(column[f] if len(column) > f else 0)
    return tuple(cut)


def _valid_tx(raw: bytes) -> bool:
    try:
        Transaction.from_bytes(raw)
    except (DecodeError, ValueError, TypeError):
        return False
    return True


class QofParty:
    """One party running order-fair atomic broadcast.

    ``on_deliver(batch)`` is called for every of-delivered batch.
    ``auto_rounds=False`` leaves round starts to explicit :meth:`start_round`
    calls, which scripted scenarios use.
    """

    def __init__(
        self,
        rt: Runtime,
        on_deliver: Callable[[DeliveredBatch], None] | None = None,
        abc_timeout: float = 10.0,
        fetch_timeout: float | None = None,
        auto_rounds: bool = True,
        label: Callable[[str], str] | None = None,
    ):
        self.rt = rt
        self.cfg = rt.config
        n = self.cfg.n
        self.on_deliver_cb = on_deliver
        self.auto_rounds = auto_rounds
        self.label = label or (lambda tx_id: tx_id[:16])
        self.fetch_timeout = fetch_timeout if fetch_timeout is not None else abc_timeout

        self.vc = [0] * n
        self.msgs: list[list[str]] = [[] for _ in range(n)]
        self.txs: dict[str, Transaction] = {}
        self.round = 0
        self.phase = IDLE
        self.statuses: dict[int, dict[PartyId, tuple]] = {}
        self.last_cut: tuple = (0,) * n
        self.cut: Cut | None = None
        self.delivered: set = set()
        self.delivered_log: list[DeliveredBatch] = []
        self.broadcasted: set = set()
        self.dropped = 0
        self.last_graph: RoundGraph | None = None
        self._fetch_timer = None
        self._flush_timer = None
        self.flush_timeout = self.fetch_timeout
        self._pred_cache: dict[tuple, bool] = {}
        self._admit_cache: dict[bytes, bool] = {}

        self.bcch = BcchChannel(rt, self.on_bcch_deliver, is_valid=_valid_tx)
        self.abc = SequencerABC(rt, self._on_abc_deliver, base_timeout=abc_timeout, admit=self._admit)
        self.vbc = ValidatedConsensus(self.abc.broadcast, self._predicate, self.on_decide)

    # -- validity predicate, cached since every value is checked several times

    def _predicate(self, r: int, L: ClockMatrix) -> bool:
        key = (r, L)
        hit = self._pred_cache.get(key)
        if hit is None:
            hit = predicate_P(r, L, self.rt.keys, self.cfg, verify=self.rt.verify)
            self._pred_cache[key] = hit
        return hit

    def _admit(self, value: bytes) -> bool:
        hit = self._admit_cache.get(value)
        if hit is None:
            try:
                tag, r, wire = decode(value)
                L = ClockMatrix.from_wire(wire)
            except (DecodeError, ValueError, TypeError):
                hit = False
            else:
                hit = tag == "vbc" and isinstance(r, int) and self._predicate(r, L)
            self._admit_cache[value] = hit
        return hit

    def _on_abc_deliver(self, value: bytes) -> None:
        self.vbc.on_abc_deliver(value)
        if self.phase == IDLE:
            self.maybe_start_round()

    # -- inbound dispatch

    def handle(self, src: PartyId, body: bytes) -> None:
        try:
            msg = decode(body)
        except DecodeError:
            self.dropped += 1
            return
        if not isinstance(msg, tuple) or not msg:
            self.dropped += 1
            return
        layer = msg[0]
        if layer == "B":
            self.bcch.handle(src, msg)
        elif layer == "A":
            self.abc.handle(src, msg)
        elif layer == "Q" and len(msg) == 5 and msg[1] == "STATUS":
            self.on_status(src, msg[2], msg[3], msg[4])
        else:
            self.dropped += 1

    # -- broadcast and channel delivery

    def of_broadcast(self, tx: Transaction) -> bool:
        if tx.id in self.broadcasted:
            return True
        self.broadcasted.add(tx.id)
        self.rt.trace("of_broadcast", tx=self.label(tx.id))
        return self.bcch.broadcast(tx.to_bytes())

    def on_bcch_deliver(self, m: BcchMessage) -> None:
        tx = Transaction.from_bytes(m.message)
        j = m.from_process
        self.vc[j] += 1
        self.msgs[j].append(tx.id)
        self.txs.setdefault(tx.id, tx)
        self.rt.trace("bcch_deliver", sender=j, instance=m.round, tx=self.label(tx.id))
        if self.phase == FETCH:
            self._check_fetched()
        elif self.phase == IDLE:
            self.maybe_start_round()

    # -- rounds

    def pending(self) -> int:
        return sum(max(0, v - c) for v, c in zip(self.vc, self.last_cut))

    def maybe_start_round(self) -> None:
        if self.phase != IDLE:
            return
        nxt = self.round + 1
        joined = len(self.statuses.get(nxt, {})) >= self.cfg.f + 1
        decided = self.vbc.early_value(nxt) is not None
        pending = self.pending() if self.auto_rounds else 0
        if joined or decided or pending >= self.cfg.round_trigger:
            self.start_round()
        elif pending and self._flush_timer is None:
            # a tail shorter than the trigger still gets a round eventually
            self._flush_timer = self.rt.set_timer(self.flush_timeout, self._flush)

    def _flush(self) -> None:
        self._flush_timer = None
        if self.phase == IDLE and self.pending():
            self.start_round()

    def start_round(self) -> None:
        if self.phase != IDLE:
            return
        if self._flush_timer is not None:
            self._flush_timer.cancel()
            self._flush_timer = None
        self.round += 1
        r = self.round
        self.phase = STATUS
        counts = tuple(self.vc)
        sig = self.rt.sign(status_statement(r, counts))
        self.rt.trace("status", round=r, vc=list(counts))
        self.statuses.setdefault(r, {})[self.rt.me] = (counts, sig)
        for old in [k for k in self.statuses if k < r]:
            del self.statuses[old]
        self.rt.broadcast(("Q", "STATUS", r, counts, sig), include_self=False)
        self._check_propose()

    def on_status(self, src: PartyId, r, counts, sig) -> None:
        if not isinstance(r, int) or not isinstance(sig, bytes) or not isinstance(counts, tuple):
            self.dropped += 1
            return
        if len(counts) != self.cfg.n or not all(isinstance(c, int) and c >= 0 for c in counts):
            self.dropped += 1
            return
        if r < self.round or (r == self.round and self.phase != STATUS) or r > self.round + STATUS_WINDOW:
            return
        rows = self.statuses.setdefault(r, {})
        if src in rows:
            return
        if not self.rt.verify(src, status_statement(r, counts), sig):
            self.dropped += 1
            return
        rows[src] = (counts, sig)
        if r == self.round:
            self._check_propose()
        elif self.phase == IDLE:
            self.maybe_start_round()

    def _check_propose(self) -> None:
        if self.phase != STATUS or self.vbc.state.in_round:
            return
        r = self.round
        rows = self.statuses.get(r, {})
        if len(rows) >= self.cfg.n - self.cfg.f:
            L = ClockMatrix.from_rows(r, [(p, c, s) for p, (c, s) in rows.items()])
        else:
            L = self.vbc.early_value(r)
            if L is None:
                return
        self.phase = DECIDING
        self.rt.trace("propose", round=r, rows=[p for p, _, _ in L.rows])
        self.vbc.propose(r, L)

    def on_decide(self, r: int, L_prime: ClockMatrix) -> None:
        if r != self.round:
            raise AssertionError(f"party {self.rt.me} decided round {r} in round {self.round}")
        self.rt.trace("decide", round=r, rows=[[p, list(c)] for p, c, _ in L_prime.rows])
        values = compute_cut(L_prime, self.cfg.f, self.cfg.n)
        self.cut = Cut(values, r)
        self.rt.trace("cut", round=r, cut=list(values))
        self.phase = FETCH
        self.resolve_missing()

    def resolve_missing(self) -> None:
        missing = [(j, self.vc[j], self.cut[j]) for j in range(self.cfg.n) if self.vc[j] < self.cut[j]]
        if not missing:
            self.run_round()
            return
        self.rt.trace("fetch", round=self.round, missing=[[j, lo, hi] for j, lo, hi in missing])
        for j, lo, hi in missing:
            self.bcch.request(j, lo, hi)
        self._fetch_timer = self.rt.set_timer(self.fetch_timeout, self._refetch)

    def _refetch(self) -> None:
        self._fetch_timer = None
        if self.phase != FETCH:
            return
        for j in range(self.cfg.n):
            if self.vc[j] < self.cut[j]:
                self.bcch.request(j, self.vc[j], self.cut[j])
        self._fetch_timer = self.rt.set_timer(self.fetch_timeout, self._refetch)

    def _check_fetched(self) -> None:
        if all(v >= c for v, c in zip(self.vc, self.cut.values)):
            if self._fetch_timer is not None:
                self._fetch_timer.cancel()
                self._fetch_timer = None
            self.run_round()

    def run_round(self) -> list[DeliveredBatch]:
        r = self.round
        cut = self.cut.values
        rg = fair_order(self.msgs, cut, self.delivered, self.cfg)
        self.last_graph = rg
        self.rt.charge(self.rt.costs.graph_per_pair * len(rg.vertices) ** 2 * self.cfg.n)
        self.rt.trace(
            "graph",
            round=r,
            vertices=sorted(self.label(t) for t in rg.vertices),
            edges=len(rg.graph.edges()),
            components=[sorted(self.label(t) for t in rg.collapsed.vertices[k].members) for k in _topo(rg)],
        )
        out = []
        for seq, members in enumerate(rg.batches):
            txs = tuple(sorted((self.txs[t] for t in members), key=lambda tx: tx.id))
            batch = DeliveredBatch(r, seq, txs)
            self.delivered.update(members)
            self.delivered_log.append(batch)
            out.append(batch)
            self.rt.trace("batch", round=r, seq=seq, txs=sorted(self.label(t) for t in members))
            if self.on_deliver_cb is not None:
                self.on_deliver_cb(batch)
        self.last_cut = tuple(max(a, b) for a, b in zip(self.last_cut, cut))
        self.phase = IDLE
        self.maybe_start_round()
        return out


def _topo(rg: RoundGraph) -> list[str]:
    """Collapsed vertex keys ordered sources-first, ties by smallest member."""
    h = rg.collapsed
    deg = h.indegrees()
    ready = sorted((k for k, d in deg.items() if d == 0), key=lambda k: min(h.vertices[k].members))
    order = []
    while ready:
        k = ready.pop(0)
        order.append(k)
        for d in h.vertices[k].out:
            deg[d] -= 1
            if deg[d] == 0:
                ready.append(d)
        ready.sort(key=lambda k: min(h.vertices[k].members))
    return order


class BaselineParty:
    """Sequencer atomic broadcast with no fairness layer, for comparisons.

    Each committed transaction is delivered as a singleton batch whose round
    is the block height.
    """

    def __init__(
        self,
        rt: Runtime,
        on_deliver: Callable[[DeliveredBatch], None] | None = None,
        abc_timeout: float = 10.0,
        label: Callable[[str], str] | None = None,
    ):
        self.rt = rt
        self.cfg = rt.config
        self.on_deliver_cb = on_deliver
        self.label = label or (lambda tx_id: tx_id[:16])
        self.delivered: set = set()
        self.delivered_log: list[DeliveredBatch] = []
        self.broadcasted: set = set()
        self.dropped = 0
        self._seq_round, self._seq = -1, -1
        self.abc = SequencerABC(rt, self._on_abc_deliver, base_timeout=abc_timeout, admit=_valid_tx)

    def handle(self, src: PartyId, body: bytes) -> None:
        try:
            msg = decode(body)
        except DecodeError:
            self.dropped += 1
            return
        if isinstance(msg, tuple) and msg and msg[0] == "A":
            self.abc.handle(src, msg)
        else:
            self.dropped += 1

    def of_broadcast(self, tx: Transaction) -> bool:
        if tx.id in self.broadcasted:
            return True
        self.broadcasted.add(tx.id)
        self.rt.trace("of_broadcast", tx=self.label(tx.id))
        self.rt.trace("arrive", tx=self.label(tx.id))
        self.abc.submit_local(tx.to_bytes())
        return True

    def _on_abc_deliver(self, value: bytes) -> None:
        tx = Transaction.from_bytes(value)
        if tx.id in self.delivered:
            return
        r = self.abc.height
        seq = self._seq + 1 if r == self._seq_round else 0
        self._seq_round, self._seq = r, seq
        batch = DeliveredBatch(r, seq, (tx,))
        self.delivered.add(tx.id)
        self.delivered_log.append(batch)
        self.rt.trace("batch", round=r, seq=seq, txs=[self.label(tx.id)])
        if self.on_deliver_cb is not None:
            self.on_deliver_cb(batch)
