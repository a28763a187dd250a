"""Deterministic discrete-event simulation of n parties plus clients."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field

from qof.core import KeyMaterial, PartyId, Transaction
from qof.engine import BaselineParty, QofParty
from qof.harness.faults import Adversary, AdversarialRuntime, make_adversary
from qof.harness.metrics import MetricsReport, compute_metrics
from qof.harness.scenario import Scenario
from qof.runtime import SimRuntime
from qof.transport import CostModel, Scheduler, SimNetwork

PROTOCOLS = ("qof", "baseline")

# Sequencer timeouts scale with the link delay but never drop below this,
# so zero-delay runs do not churn through views while CPUs are busy.
MIN_ABC_TIMEOUT = 20.0


class InvariantViolation(AssertionError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (trace position {position})")
        self.position = position


@dataclass
class SimResult:
    scenario: Scenario
    protocol: str
    traces: list
    metrics: MetricsReport
    correct: list
    labels: dict = field(repr=False, default_factory=dict)
    attacks: list = field(default_factory=list)
    quiescent: bool = True
    parties: list = field(repr=False, default_factory=list)

    @property
    def digest(self) -> str:
        return trace_digest(self.traces)

    def delivered_log(self, party: PartyId) -> list[frozenset]:
        return [frozenset(r["txs"]) for r in self.traces if r["ev"] == "batch" and r["party"] == party]


def trace_lines(traces: list) -> list[str]:
    return [json.dumps(rec, sort_keys=True, separators=(",", ":")) for rec in traces]


def trace_digest(traces: list) -> str:
    h = hashlib.sha256()
    for line in trace_lines(traces):
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


class Simulation:
    def __init__(self, scenario: Scenario, protocol: str = "qof", check_invariants: bool = True):
        if protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {protocol!r}")
        self.scenario = scenario
        self.protocol = protocol
        self.check_invariants = check_invariants
        cfg = scenario.config
        self.keys = KeyMaterial(cfg.n, seed=scenario.seed, scheme=scenario.signature_scheme)
        self.scheduler = Scheduler()
        costs = CostModel(**scenario.costs) if scenario.costs is not None else CostModel()
        self.network = SimNetwork(
            self.keys, self.scheduler, seed=f"net:{scenario.seed}", delay_range=scenario.delay_range, costs=costs
        )
        self.client_delay = scenario.client_delay or scenario.delay_range
        self.traces: list[dict] = []
        self.labels: dict[str, str] = {}
        self._taken: set = set()
        self.txs: dict[str, Transaction] = {}
        self.attacks: list[tuple] = []
        self.correct = scenario.correct
        self._correct_set = frozenset(self.correct)
        self._logs: dict[PartyId, list] = {p: [] for p in self.correct}
        self._delivered: dict[PartyId, set] = {p: set() for p in self.correct}
        self._reference: list[frozenset] = []

        abc_timeout = max(MIN_ABC_TIMEOUT, 10.0 * scenario.mean_delay)
        self.adversaries: dict[PartyId, Adversary] = {}
        for fs in scenario.faults:
            self.adversaries[fs.party] = make_adversary(fs, self)
        self.parties = []
        for p in range(cfg.n):
            adv = self.adversaries.get(p)
            if adv is None:
                rt = SimRuntime(p, cfg, self.keys, self.network, self._sink)
            else:
                rt = AdversarialRuntime(p, cfg, self.keys, self.network, self._sink, adversary=adv)
            if protocol == "qof":
                party = QofParty(rt, abc_timeout=abc_timeout, auto_rounds=scenario.auto_rounds, label=self.label)
            else:
                party = BaselineParty(rt, abc_timeout=abc_timeout, label=self.label)
            self.parties.append(party)
            self.network.attach(p, self._handler(p, party, adv))
            if adv is not None:
                adv.bind(party)
        for adv in self.adversaries.values():
            adv.install()

    # -- labels and trace

    def register(self, tx: Transaction, label: str) -> str:
        """Name ``tx`` in the trace; a label taken by another tx gets a suffix."""
        if tx.id not in self.labels:
            name, k = label, 1
            while name in self._taken:
                k += 1
                name = f"{label}~{k}"
            self._taken.add(name)
            self.labels[tx.id] = name
        self.txs.setdefault(tx.id, tx)
        return self.labels[tx.id]

    def label(self, tx_id: str) -> str:
        return self.labels.get(tx_id, tx_id[:16])

    def note(self, party: PartyId, ev: str, **fields) -> None:
        rec = {"t": round(self.scheduler.now, 6), "party": party, "ev": ev}
        rec.update(fields)
        self._sink(rec)

    def _sink(self, rec: dict) -> None:
        self.traces.append(rec)
        if self.check_invariants and rec["party"] in self._correct_set:
            if rec["ev"] == "batch":
                self._check_batch(rec)
            elif rec["ev"] == "decide" and self.protocol == "qof":
                try:
                    self.parties[rec["party"]].vbc.state.check()
                except AssertionError as exc:
                    raise InvariantViolation(str(exc), len(self.traces) - 1) from None

    def _check_batch(self, rec: dict) -> None:
        p = rec["party"]
        batch = frozenset(rec["txs"])
        pos = len(self.traces) - 1
        dup = batch & self._delivered[p]
        if dup:
            raise InvariantViolation(f"party {p} delivered {sorted(dup)} twice", pos)
        self._delivered[p] |= batch
        i = len(self._logs[p])
        self._logs[p].append(batch)
        if i < len(self._reference):
            if self._reference[i] != batch:
                raise InvariantViolation(
                    f"party {p} batch {i} is {sorted(batch)}, another correct party has "
                    f"{sorted(self._reference[i])}",
                    pos,
                )
        else:
            self._reference.append(batch)

    # -- plumbing

    def _handler(self, p: PartyId, party, adv: Adversary | None):
        if adv is None:
            return party.handle

        def handle(src, body):
            if adv.inbound(src, body):
                party.handle(src, body)

        return handle

    def submit(self, p: PartyId, tx: Transaction, when: float) -> None:
        """A client's transaction reaches party ``p`` at virtual time ``when``."""
        self.scheduler.at(when, self._client_arrive, p, tx)

    def _client_arrive(self, p: PartyId, tx: Transaction) -> None:
        if self.network.is_crashed(p):
            return
        self.network.charge(p, self.network.costs.per_message)
        adv = self.adversaries.get(p)
        if adv is not None and not adv.on_client(tx):
            return
        self.parties[p].of_broadcast(tx)

    def _local(self, p: PartyId, fn, *args) -> None:
        if self.network.is_crashed(p):
            return
        self.network.charge(p, 0.0)
        fn(*args)

    def _load(self) -> None:
        sc = self.scenario
        n = sc.config.n
        if sc.script:
            self._load_script()
            return
        rng = random.Random(f"work:{sc.seed}")
        lo, hi = self.client_delay
        gap = 1000.0 / sc.client_rate
        for k in range(sc.tx_count):
            client, seq = k % sc.n_clients, k // sc.n_clients
            tx = Transaction(client, seq, rng.randbytes(sc.payload_size))
            self.register(tx, f"c{client}.{seq}")
            t0 = k * gap
            for p in range(n):
                self.submit(p, tx, t0 + (lo if lo == hi else rng.uniform(lo, hi)))

    def _load_script(self) -> None:
        n = self.scenario.config.n
        by_label: dict[str, Transaction] = {}
        for action in self.scenario.script:
            at = float(action["at"])
            if "broadcast" in action:
                name = str(action["broadcast"])
                tx = by_label.get(name)
                if tx is None:
                    tx = Transaction(0, len(by_label), name.encode())
                    by_label[name] = tx
                    self.register(tx, name)
                self.submit(action["party"], tx, at)
            else:
                who = action["start_round"]
                for p in range(n) if who == "all" else who:
                    party = self.parties[p]
                    if isinstance(party, QofParty):
                        self.scheduler.at(at, self._local, p, party.start_round)

    def run(self) -> SimResult:
        cfg = self.scenario.config
        self.traces.append({
            "t": 0.0, "party": -1, "ev": "meta", "protocol": self.protocol, "n": cfg.n, "f": cfg.f,
            "kappa": cfg.kappa, "correct": list(self.correct), "seed": self.scenario.seed,
        })
        self._load()
        self.scheduler.run(until=self.scenario.duration)
        quiescent = self.scheduler.pending() == 0 or all(
            entry[2].cancelled for entry in self.scheduler._queue
        )
        metrics = compute_metrics(
            self.traces,
            self.correct,
            protocol=self.protocol,
            n=self.scenario.config.n,
            injected=self.scenario.tx_count if not self.scenario.script else len(self.labels),
            counters=self._counters(),
        )
        return SimResult(
            scenario=self.scenario,
            protocol=self.protocol,
            traces=self.traces,
            metrics=metrics,
            correct=self.correct,
            labels=dict(self.labels),
            attacks=list(self.attacks),
            quiescent=quiescent,
            parties=self.parties,
        )

    def _counters(self) -> dict:
        out = {"dropped_mac": 0, "dropped_dup": 0, "dropped_malformed": 0, "dropped_protocol": 0,
               "frames": 0, "view_changes": 0}
        for p in self.correct:
            st = self.network.stats(p)
            out["dropped_mac"] += st.dropped_mac
            out["dropped_dup"] += st.dropped_dup
            out["dropped_malformed"] += st.dropped_malformed
            out["frames"] += st.sent
            party = self.parties[p]
            out["dropped_protocol"] += party.dropped + party.abc.stats.rejected
            if isinstance(party, QofParty):
                out["dropped_protocol"] += party.bcch.dropped
            out["view_changes"] += party.abc.stats.view_changes
        out["bytes"] = self.network.bytes_sent
        return out


def simulate(scenario: Scenario, protocol: str = "qof", check_invariants: bool = True) -> SimResult:
    return Simulation(scenario, protocol, check_invariants).run()


def run(scenario: Scenario, protocol: str = "qof") -> tuple[list, MetricsReport]:
    res = simulate(scenario, protocol)
    return res.traces, res.metrics
