"""Validated Byzantine consensus over a pluggable atomic broadcast.

:class:`ValidatedConsensus` turns any total-order broadcast into one-shot
consensus per round: a party abc-broadcasts ``("vbc", r, v)`` and decides the
first abc-delivered round-``r`` value that satisfies the validity predicate.

:class:`SequencerABC` is the total-order broadcast used by the harness: a
leader batches submitted values into blocks, parties vote, and a block commits
at a vote quorum. Leaders rotate round-robin on timeout; a new leader adopts
the highest-view vote reported for the next height, so committed blocks are
never replaced. It tolerates up to ``f`` crashed or silent parties.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

from qof.core import Config, KeyMaterial, PartyId, decode, digest, encode
from qof.runtime import Runtime

log = logging.getLogger(__name__)


class ProtocolMisuse(RuntimeError):
    """A request arrived in a state where the protocol forbids it."""


# --------------------------------------------------------------------------
# clock matrices and the validity predicate


def status_statement(rnd: int, counts: Sequence[int]) -> bytes:
    return encode(("qof-status", rnd, tuple(counts)))


@dataclass(frozen=True)
class ClockMatrix:
    """Signed vector clocks of one round: rows ``(party, counts, signature)``."""

    round: int
    rows: tuple

    @classmethod
    def from_rows(cls, rnd: int, rows) -> "ClockMatrix":
        return cls(rnd, tuple(sorted((p, tuple(c), s) for p, c, s in rows)))

    @property
    def L(self) -> dict[PartyId, tuple[int, ...]]:
        return {p: c for p, c, _ in self.rows}

    @property
    def Sigma(self) -> dict[PartyId, bytes]:
        return {p: s for p, _, s in self.rows}

    def column(self, j: int) -> list[int]:
        return [c[j] for _, c, _ in self.rows]

    def to_wire(self) -> tuple:
        return (self.round, self.rows)

    @classmethod
    def from_wire(cls, wire) -> "ClockMatrix":
        rnd, rows = wire
        if not isinstance(rnd, int):
            raise ValueError("round must be an integer")
        return cls(rnd, tuple((p, tuple(c), s) for p, c, s in rows))

    def encode(self) -> bytes:
        return encode(self.to_wire())


def predicate_P(r: int, L: ClockMatrix, keys: KeyMaterial, config: Config, verify=None) -> bool:
    """True iff ``L`` holds at least n-f distinct rows signed for round ``r``."""
    verify = verify or keys.verify
    if not isinstance(L, ClockMatrix) or L.round != r:
        return False
    if len(L.rows) < config.n - config.f:
        return False
    seen = set()
    for row in L.rows:
        if len(row) != 3:
            return False
        p, counts, sig = row
        if not isinstance(p, int) or not 0 <= p < config.n or p in seen:
            return False
        seen.add(p)
        if len(counts) != config.n or not all(isinstance(c, int) and c >= 0 for c in counts):
            return False
        if not isinstance(sig, bytes) or not verify(p, status_statement(r, counts), sig):
            return False
    return True


# --------------------------------------------------------------------------
# one-shot consensus per round on top of atomic broadcast


@dataclass
class VbcState:
    in_round: bool = False
    rp: int = 0
    rd: int = 0

    def check(self) -> None:
        assert self.rd <= self.rp <= self.rd + 1, self
        assert self.in_round == (self.rp == self.rd + 1), self


@dataclass
class VbcStats:
    decided: int = 0
    discarded: int = 0
    buffered: int = 0


class ValidatedConsensus:
    """Propose/decide adapter; ``abc_broadcast`` takes encoded bytes.

    Values for a round the party has not proposed in yet are kept (first one
    only) and decided as soon as the party proposes that round, so a slow
    proposer still decides the first abc-delivered value.
    """

    def __init__(
        self,
        abc_broadcast: Callable[[bytes], None],
        predicate: Callable[[int, ClockMatrix], bool],
        on_decide: Callable[[int, ClockMatrix], None],
    ):
        self.abc_broadcast = abc_broadcast
        self.predicate = predicate
        self.on_decide = on_decide
        self.state = VbcState()
        self.stats = VbcStats()
        self._early: dict[int, ClockMatrix] = {}

    def propose(self, r: int, v: ClockMatrix) -> None:
        st = self.state
        if st.in_round:
            raise ProtocolMisuse(f"propose for round {r} while round {st.rp} is open")
        if r != st.rp + 1:
            raise ProtocolMisuse(f"propose for round {r}, expected {st.rp + 1}")
        if not self.predicate(r, v):
            raise ProtocolMisuse(f"proposal for round {r} fails the validity predicate")
        st.rp += 1
        st.in_round = True
        st.check()
        self.abc_broadcast(encode(("vbc", st.rp, v.to_wire())))
        early = self._early.pop(st.rp, None)
        if early is not None:
            self._decide(early)

    def early_value(self, r: int) -> ClockMatrix | None:
        return self._early.get(r)

    def on_abc_deliver(self, w: bytes) -> ClockMatrix | None:
        try:
            tag, r, wire = decode(w)
            v = ClockMatrix.from_wire(wire)
        except (ValueError, TypeError):
            self.stats.discarded += 1
            return None
        if tag != "vbc" or not isinstance(r, int):
            self.stats.discarded += 1
            return None
        st = self.state
        if r == st.rp and st.rp > st.rd and self.predicate(r, v):
            self._decide(v)
            return v
        if r > st.rp and r not in self._early and self.predicate(r, v):
            self._early[r] = v
            self.stats.buffered += 1
            return None
        self.stats.discarded += 1
        return None

    def _decide(self, v: ClockMatrix) -> None:
        st = self.state
        st.rd += 1
        st.in_round = False
        st.check()
        self.stats.decided += 1
        self.on_decide(st.rd, v)


# --------------------------------------------------------------------------
# leader-sequencer atomic broadcast


def block_statement(leader: PartyId, view: int, height: int, values: tuple) -> bytes:
    return encode(("abc-block", leader, view, height, values))


@dataclass(frozen=True)
class Block:
    leader: PartyId
    view: int
    height: int
    values: tuple
    sig: bytes

    def to_wire(self) -> tuple:
        return (self.leader, self.view, self.height, self.values, self.sig)

    @classmethod
    def from_wire(cls, wire) -> "Block":
        leader, view, height, values, sig = wire
        if not all(isinstance(x, int) for x in (leader, view, height)):
            raise ValueError("bad block header")
        if not all(isinstance(v, bytes) for v in values) or not isinstance(sig, bytes):
            raise ValueError("bad block body")
        return cls(leader, view, height, tuple(values), sig)

    @property
    def id(self) -> bytes:
        return digest(block_statement(self.leader, self.view, self.height, self.values))


@dataclass
class AbcStats:
    blocks: int = 0
    view_changes: int = 0
    rejected: int = 0


class SequencerABC:
    """Total-order broadcast for one party.

    ``on_deliver(value)`` fires once per committed value, in the same order at
    every correct party. ``admit(value)`` filters what a leader may put in a
    block and what a voter accepts.
    """

    def __init__(
        self,
        rt: Runtime,
        on_deliver: Callable[[bytes], None],
        base_timeout: float = 10.0,
        admit: Callable[[bytes], bool] | None = None,
    ):
        self.rt = rt
        self.cfg: Config = rt.config
        self.on_deliver = on_deliver
        self.base_timeout = base_timeout
        self.admit = admit or (lambda v: True)
        self.quorum = self.cfg.echo_quorum
        self.view = 0
        self.view_ready = True
        self.committed: list[Block] = []
        self.delivered: set = set()
        self.pending: dict[bytes, bytes] = {}
        self.outstanding = False
        self.last_vote: Block | None = None
        self.votes: dict[tuple, set] = {}
        self.blocks: dict[bytes, Block] = {}
        self.early_proposals: dict[int, Block] = {}
        self.view_changes: dict[int, dict[PartyId, tuple]] = {}
        self._started_view = 0
        self._timer = None
        self._timer_height = 0
        self._backoff = 0
        self.stats = AbcStats()

    def leader(self, view: int) -> PartyId:
        return view % self.cfg.n

    @property
    def height(self) -> int:
        return len(self.committed)

    # -- requests

    def broadcast(self, value: bytes) -> None:
        self.rt.broadcast(("A", "SUBMIT", value))

    def submit_local(self, value: bytes) -> None:
        """Add a value to this party's pool without forwarding it."""
        self._add_pending(value)

    def _add_pending(self, value: bytes) -> None:
        d = digest(value)
        if d in self.delivered or d in self.pending:
            return
        if not self.admit(value):
            self.stats.rejected += 1
            return
        self.pending[d] = value
        self._maybe_propose()
        self._arm_timer()

    # -- leader

    def _maybe_propose(self) -> None:
        if self.rt.me != self.leader(self.view) or not self.view_ready or self.outstanding:
            return
        if not self.pending:
            return
        values = tuple(list(self.pending.values())[: self.cfg.batch_cap])
        self._propose(values)

    def _propose(self, values: tuple) -> None:
        stmt = block_statement(self.rt.me, self.view, self.height, values)
        block = Block(self.rt.me, self.view, self.height, values, self.rt.sign(stmt))
        self.outstanding = True
        self.rt.broadcast(("A", "PROPOSE", block.to_wire()))

    # -- voting and commit

    def _valid_block(self, block: Block) -> bool:
        bid = block.id
        if bid in self.blocks:
            return True
        if block.leader != self.leader(block.view):
            return False
        if not self.rt.verify(block.leader, block_statement(block.leader, block.view, block.height, block.values), block.sig):
            return False
        self.blocks[bid] = block
        return True

    def _on_propose(self, src: PartyId, block: Block) -> None:
        if src != block.leader or block.view < self.view:
            return
        if not self._valid_block(block):
            self.stats.rejected += 1
            return
        if block.view > self.view:
            self._enter_view(block.view)
        if block.height > self.height:
            self.early_proposals[block.height] = block
            return
        if block.height < self.height:
            return
        self._vote(block)

    def _vote(self, block: Block) -> None:
        lv = self.last_vote
        if lv is not None and (lv.view, lv.height) >= (block.view, block.height):
            return
        if not all(self.admit(v) for v in block.values if digest(v) not in self.delivered):
            self.stats.rejected += 1
            return
        self.last_vote = block
        self.rt.broadcast(("A", "VOTE", block.to_wire()))

    def _on_vote(self, src: PartyId, block: Block) -> None:
        if not self._valid_block(block):
            return
        key = (block.view, block.height, block.id)
        voters = self.votes.setdefault(key, set())
        voters.add(src)
        self._try_commit()

    def _try_commit(self) -> None:
        progressed = True
        while progressed:
            progressed = False
            for (view, height, bid), voters in list(self.votes.items()):
                if height == self.height and len(voters) >= self.quorum:
                    self._commit(self.blocks[bid])
                    progressed = True
                    break
        # votes for old heights are dead weight
        for key in [k for k in self.votes if k[1] < self.height]:
            del self.votes[key]

    def _commit(self, block: Block) -> None:
        self.committed.append(block)
        self.stats.blocks += 1
        self._backoff = 0
        if block.leader == self.rt.me:
            self.outstanding = False
        for v in block.values:
            d = digest(v)
            self.pending.pop(d, None)
            if d in self.delivered:
                continue
            self.delivered.add(d)
            self.on_deliver(v)
        if self.rt.me == self.leader(self.view):
            self.outstanding = False
        early = self.early_proposals.pop(self.height, None)
        for h in [h for h in self.early_proposals if h < self.height]:
            del self.early_proposals[h]
        if early is not None and early.view >= self.view:
            self._vote(early)
        if not self.view_ready:
            self._try_start_view()
        self._maybe_propose()
        self._arm_timer(restart=True)

    # -- timeouts and view change

    def _arm_timer(self, restart: bool = False) -> None:
        if restart and self._timer is not None:
            self._timer.cancel()
            self._timer = None
        if self._timer is not None or not self.pending:
            return
        self._timer_height = self.height
        delay = self.base_timeout * (2 ** min(self._backoff, 16))
        self._timer = self.rt.set_timer(delay, self._on_timeout)

    def _on_timeout(self) -> None:
        self._timer = None
        if not self.pending:
            return
        if self.height > self._timer_height:
            self._arm_timer()
            return
        self._backoff += 1
        self._enter_view(self.view + 1)
        self._arm_timer()

    def _enter_view(self, view: int) -> None:
        if view <= self.view:
            return
        self.view = view
        self.stats.view_changes += 1
        self.outstanding = False
        self.view_ready = False
        lv = self.last_vote.to_wire() if self.last_vote is not None else None
        self.rt.broadcast(("A", "VIEWCHANGE", view, self.height, lv))

    def _on_view_change(self, src: PartyId, view: int, height: int, lv) -> None:
        if view < self.view:
            return
        vote = None
        if lv is not None:
            vote = Block.from_wire(lv)
            if not self._valid_block(vote):
                return
        msgs = self.view_changes.setdefault(view, {})
        msgs.setdefault(src, (height, vote))
        if view > self.view and len(msgs) >= self.cfg.f + 1:
            self._enter_view(view)
        if view == self.view and self.rt.me == self.leader(view) and not self.view_ready:
            self._try_start_view()

    def _try_start_view(self) -> None:
        if self.rt.me != self.leader(self.view):
            return
        msgs = self.view_changes.get(self.view, {})
        if len(msgs) < self.cfg.n - self.cfg.f:
            return
        known = max(h for h, _ in msgs.values())
        if self.height < known:
            return  # catch up on commits first; _commit retries
        self.view_ready = True
        self._started_view = self.view
        h = self.height
        locked = [v for _, v in msgs.values() if v is not None and v.height == h]
        if locked:
            best = max(locked, key=lambda b: b.view)
            self._propose(best.values)
        else:
            self._maybe_propose()

    # -- dispatch

    def handle(self, src: PartyId, msg: tuple) -> None:
        kind = msg[1]
        try:
            if kind == "SUBMIT":
                if isinstance(msg[2], bytes):
                    self._add_pending(msg[2])
            elif kind == "PROPOSE":
                self._on_propose(src, Block.from_wire(msg[2]))
            elif kind == "VOTE":
                self._on_vote(src, Block.from_wire(msg[2]))
            elif kind == "VIEWCHANGE":
                _, _, view, height, lv = msg
                if isinstance(view, int) and isinstance(height, int):
                    self._on_view_change(src, view, height, lv)
        except (TypeError, ValueError, KeyError, IndexError):
            self.stats.rejected += 1
