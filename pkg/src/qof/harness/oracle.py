"""Property checkers that read nothing but a trace.

Transactions are identified by their trace labels. The set of correct
parties comes from the trace's ``meta`` record unless given explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qof.core import Config


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    party: int | None = None

    def __str__(self):
        who = f"party {self.party}: " if self.party is not None else ""
        return f"[{self.kind}] {who}{self.detail}"


def meta(traces: list) -> dict:
    for rec in traces:
        if rec.get("ev") == "meta":
            return rec
    return {}


def correct_parties(traces: list) -> list[int]:
    m = meta(traces)
    if "correct" in m:
        return list(m["correct"])
    return sorted({rec["party"] for rec in traces if rec.get("party", -1) >= 0})


def correct_orders(traces: list, correct: list | None = None) -> dict[int, list[str]]:
    """Per correct party, the transactions in of-broadcast invocation order."""
    correct = correct_parties(traces) if correct is None else correct
    out = {p: [] for p in correct}
    for rec in traces:
        if rec["ev"] == "of_broadcast" and rec["party"] in out:
            out[rec["party"]].append(rec["tx"])
    return out


def delivered_logs(traces: list, correct: list | None = None) -> dict[int, list[frozenset]]:
    correct = correct_parties(traces) if correct is None else correct
    out = {p: [] for p in correct}
    for rec in traces:
        if rec["ev"] == "batch" and rec["party"] in out:
            out[rec["party"]].append(frozenset(rec["txs"]))
    return out


def precedence(orders: dict[int, list[str]], universe: list[str]) -> np.ndarray:
    """``B[a, b]`` = number of parties whose sequence has a before b.

    A transaction a party never broadcast counts as coming after every
    transaction it did broadcast.
    """
    index = {tx: i for i, tx in enumerate(universe)}
    B = np.zeros((len(universe), len(universe)), dtype=np.int64)
    for seq in orders.values():
        pos = np.full(len(universe), np.inf)
        for k, tx in enumerate(seq):
            if tx in index and pos[index[tx]] == np.inf:
                pos[index[tx]] = k
        B += pos[:, None] < pos[None, :]
    return B


def oracle_fairness(
    traces: list,
    orders: dict[int, list[str]] | None = None,
    cfg: Config | None = None,
    correct: list | None = None,
) -> list[Violation]:
    """Flag every premise pair (a, b) where some correct party delivered b in a strictly earlier batch."""
    if cfg is None:
        m = meta(traces)
        cfg = Config(m["n"], m["f"], m.get("kappa", 0))
    correct = correct_parties(traces) if correct is None else correct
    orders = correct_orders(traces, correct) if orders is None else orders
    logs = delivered_logs(traces, correct)
    universe = sorted({tx for seq in orders.values() for tx in seq} | {tx for log in logs.values() for b in log for tx in b})
    if not universe:
        return []
    B = precedence(orders, universe)
    premise = B > B.T + 2 * cfg.f + cfg.kappa
    if not premise.any():
        return []
    index = {tx: i for i, tx in enumerate(universe)}
    out = []
    for p, log in logs.items():
        D = np.full(len(universe), np.inf)
        for k, batch in enumerate(log):
            for tx in batch:
                D[index[tx]] = min(D[index[tx]], k)
        # bad[a, b]: premise says a before b, yet b came in an earlier batch
        bad = premise & (D[None, :] < D[:, None])
        for a, b in zip(*np.nonzero(bad)):
            out.append(
                Violation(
                    "fairness",
                    f"b({universe[a]},{universe[b]})={B[a, b]} > b({universe[b]},{universe[a]})="
                    f"{B[b, a]}+{2 * cfg.f + cfg.kappa} but {universe[b]} was delivered first",
                    p,
                )
            )
    return out


def oracle_abc(traces: list, correct: list | None = None, complete: bool = False) -> list[Violation]:
    """Total order (prefix agreement), no duplication, no creation; ``complete`` demands equal logs."""
    correct = correct_parties(traces) if correct is None else correct
    logs = delivered_logs(traces, correct)
    broadcast = {rec["tx"] for rec in traces if rec["ev"] in ("of_broadcast", "arrive")}
    out = []
    longest = max(logs.values(), key=len, default=[])
    for p, log in logs.items():
        for i, batch in enumerate(log):
            if batch != longest[i]:
                out.append(Violation("total_order", f"batch {i} is {sorted(batch)}, expected {sorted(longest[i])}", p))
                break
        if complete and len(log) != len(longest):
            out.append(Violation("agreement", f"delivered {len(log)} batches, another party {len(longest)}", p))
        seen: set = set()
        for batch in log:
            dup = seen & batch
            if dup:
                out.append(Violation("duplication", f"{sorted(dup)} delivered again", p))
            seen |= batch
        created = seen - broadcast
        if created:
            out.append(Violation("creation", f"{sorted(created)} never broadcast", p))
    return out


def bcch_consistency(traces: list, correct: list | None = None) -> list[Violation]:
    """No two correct parties deliver different messages for one (sender, instance)."""
    correct = set(correct_parties(traces) if correct is None else correct)
    seen: dict[tuple, dict] = {}
    for rec in traces:
        if rec["ev"] == "bcch_deliver" and rec["party"] in correct:
            seen.setdefault((rec["sender"], rec["instance"]), {}).setdefault(rec["tx"], rec["party"])
    return [
        Violation("bcch", f"sender {s} instance {i} delivered as {sorted(txs)}")
        for (s, i), txs in sorted(seen.items())
        if len(txs) > 1
    ]


def check_all(traces: list, complete: bool = False) -> list[Violation]:
    return oracle_abc(traces, complete=complete) + oracle_fairness(traces) + bcch_consistency(traces)
