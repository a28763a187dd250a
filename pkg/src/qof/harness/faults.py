"""Adversaries as wrappers around a correct party.

An :class:`Adversary` sits between a party and the network. It sees every
outbound message body before it is sealed, every inbound body before the
party handles it, and every client submission. All behaviors except
``crash`` and ``mute`` keep the wrapped honest code running and only lie at
the edges, so each attack is a small, auditable diff against a correct
party.
"""

from __future__ import annotations

import random
from typing import TYPE_CHECKING

from qof.bcch import ECHO, FINAL, SEND, echo_statement
from qof.core import DecodeError, PartyId, Transaction, decode, digest, encode
from qof.harness.scenario import FaultSpec
from qof.runtime import SimRuntime
from qof.vbc import status_statement

if TYPE_CHECKING:
    from qof.harness.sim import Simulation


class Adversary:
    def __init__(self, spec: FaultSpec, sim: "Simulation"):
        self.spec = spec
        self.sim = sim
        self.me = spec.party
        self.rng = random.Random(f"adv:{sim.scenario.seed}:{spec.party}:{spec.behavior}")
        self.party = None

    def bind(self, party) -> None:
        self.party = party

    def install(self) -> None:
        """Hook for behaviors that schedule events up front."""

    def outbound(self, to: PartyId, body: bytes) -> list[bytes]:
        return [body]

    def inbound(self, src: PartyId, body: bytes) -> bool:
        return True

    def on_client(self, tx: Transaction) -> bool:
        """Return False to keep the wrapped party from of-broadcasting ``tx``."""
        return True


class Crash(Adversary):
    def install(self) -> None:
        at = float(self.spec.params.get("at", 0.0))
        self.sim.scheduler.at(at, self._crash)

    def _crash(self) -> None:
        self.sim.network.crash(self.me)
        self.sim.note(self.me, "crash")


class Mute(Adversary):
    def outbound(self, to, body):
        return []


class LieStatus(Adversary):
    """Sends validly signed but false vector clocks in its status messages."""

    def outbound(self, to, body):
        msg = _decode(body)
        if not (isinstance(msg, tuple) and len(msg) == 5 and msg[:2] == ("Q", "STATUS")):
            return [body]
        _, _, r, counts, _ = msg
        mode = self.spec.params.get("mode", "inflate")
        if mode == "split":
            mode = "inflate" if to % 2 == 0 else "deflate"
        amount = int(self.spec.params.get("amount", 3))
        if mode == "inflate":
            lie = tuple(c + amount for c in counts)
        else:
            lie = tuple(max(0, c - amount) for c in counts)
        sig = self.sim.keys.sign(self.me, status_statement(r, lie))
        return [encode(("Q", "STATUS", r, lie, sig))]


class EquivocateBcch(Adversary):
    """Sends a different transaction to a minority of correct parties.

    The majority gets the honest message, so the honest code certifies it.
    The minority echoes the alternative; with those echoes, signatures from
    every colluding faulty party, and duplicates padding the count up to a
    quorum, the adversary sends the minority a FINAL that must not pass.
    """

    def __init__(self, spec, sim):
        super().__init__(spec, sim)
        cfg = sim.scenario.config
        correct = [p for p in sim.scenario.correct]
        k = max(1, min(len(correct) - 1, cfg.n - cfg.echo_quorum))
        self.minority = frozenset(correct[-k:])
        self.alt: dict[int, bytes] = {}
        self.alt_echoes: dict[int, dict[PartyId, bytes]] = {}
        self.seen: list[Transaction] = []

    def on_client(self, tx):
        self.seen.append(tx)
        return True

    def _alternative(self, rnd: int, message: bytes) -> bytes:
        alt = self.alt.get(rnd)
        if alt is None:
            others = [tx for tx in self.seen if tx.to_bytes() != message]
            if others:
                alt = self.rng.choice(others).to_bytes()
            else:
                alt = Transaction(90_000 + self.me, rnd, b"equivocation").to_bytes()
            self.alt[rnd] = alt
        return alt

    def outbound(self, to, body):
        msg = _decode(body)
        if isinstance(msg, tuple) and len(msg) == 4 and msg[:2] == ("B", SEND) and to in self.minority:
            _, _, rnd, message = msg
            return [encode(("B", SEND, rnd, self._alternative(rnd, message)))]
        return [body]

    def inbound(self, src, body):
        msg = _decode(body)
        if isinstance(msg, tuple) and len(msg) == 5 and msg[:2] == ("B", ECHO):
            _, _, rnd, dig, sig = msg
            alt = self.alt.get(rnd)
            if alt is not None and dig == digest(alt) and src in self.minority:
                echoes = self.alt_echoes.setdefault(rnd, {})
                echoes[src] = sig
                if len(echoes) == len(self.minority):
                    self._forge(rnd, alt, echoes)
                return False
        return True

    def _forge(self, rnd: int, alt: bytes, echoes: dict) -> None:
        cfg = self.sim.scenario.config
        stmt = echo_statement(self.me, rnd, digest(alt))
        sigs = dict(echoes)
        for p in self.sim.scenario.faulty:
            sigs[p] = self.sim.keys.sign(p, stmt)
        rows = sorted(sigs.items())
        while len(rows) < cfg.echo_quorum:
            rows.append(rows[0])
        cert = (self.me, rnd, digest(alt), tuple(rows))
        final = encode(("B", FINAL, self.me, rnd, alt, cert))
        for p in sorted(self.minority):
            self.sim.network.al_send(self.me, p, final)
        self.sim.note(self.me, "equivocate", instance=rnd, signers=len(sigs))


class Frontrun(Adversary):
    """Sandwiches transactions of a victim client.

    On seeing a victim transaction the adversary orders a front transaction
    before it and a back transaction after it on its own channel, and
    submits both to every other party ``lag`` ms later, as a client would.
    """

    def __init__(self, spec, sim):
        super().__init__(spec, sim)
        self.victim_client = int(spec.params.get("victim_client", 0))
        self.attacker_client = int(spec.params.get("attacker_client", 77_777))
        default_lag = sim.client_delay[1] + 1.0
        self.lag = float(spec.params.get("lag", default_lag))
        self.count = 0

    def on_client(self, tx):
        if tx.client_id != self.victim_client:
            return True
        k = self.count
        self.count += 1
        front = Transaction(self.attacker_client, 2 * k, b"front:" + tx.id[:16].encode())
        back = Transaction(self.attacker_client, 2 * k + 1, b"back:" + tx.id[:16].encode())
        # several front-runners may share a victim, so labels carry the party
        lf = self.sim.register(front, f"a{self.me}.{k}.front")
        lb = self.sim.register(back, f"a{self.me}.{k}.back")
        self.sim.attacks.append((self.sim.label(tx.id), lf, lb))
        self.party.of_broadcast(front)
        self.party.of_broadcast(tx)
        self.party.of_broadcast(back)
        lo, hi = self.sim.client_delay
        for p in range(self.sim.scenario.config.n):
            if p != self.me:
                when = self.sim.scheduler.now + self.lag + self.rng.uniform(lo, hi)
                self.sim.submit(p, front, when)
                self.sim.submit(p, back, when)
        return False


ADVERSARIES = {
    "crash": Crash,
    "mute": Mute,
    "lie_status": LieStatus,
    "equivocate_bcch": EquivocateBcch,
    "frontrun": Frontrun,
}


def make_adversary(spec: FaultSpec, sim: "Simulation") -> Adversary:
    return ADVERSARIES[spec.behavior](spec, sim)


class AdversarialRuntime(SimRuntime):
    """A simulated runtime whose outbound bodies pass through an adversary."""

    def __init__(self, *args, adversary: Adversary, **kwargs):
        super().__init__(*args, **kwargs)
        self.adversary = adversary

    def send_raw(self, to, body):
        for out in self.adversary.outbound(to, body):
            self.network.al_send(self.me, to, out)


def _decode(body: bytes):
    try:
        return decode(body)
    except DecodeError:
        return None
