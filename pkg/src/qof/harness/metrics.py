"""Throughput and server latency computed from a trace."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

# The event marking a transaction's arrival at the protocol, per protocol.
ENTRY_EVENT = {"qof": "bcch_deliver", "baseline": "arrive"}


@dataclass
class MetricsReport:
    protocol: str
    n: int
    injected: int
    delivered: int
    throughput: float  # tx/s of virtual time
    latency_mean: float  # ms
    latency_median: float
    latency_p99: float
    consensus_ms: float  # mean status -> decide per round
    graph_ms: float  # mean decide -> graph phase done per round
    rounds: int
    span_ms: float
    counters: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = asdict(self)
        out.pop("counters")
        out.update(self.counters)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.row()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def compute_metrics(
    traces: list,
    correct: list,
    protocol: str = "qof",
    n: int = 0,
    injected: int = 0,
    counters: dict | None = None,
) -> MetricsReport:
    correct = set(correct)
    entry_ev = ENTRY_EVENT[protocol]
    entry: dict[str, float] = {}
    first_submit = None
    delivered_at: dict[int, dict[str, float]] = {p: {} for p in correct}
    status_t: dict[tuple, float] = {}
    decide_t: dict[tuple, float] = {}
    consensus, graph = [], []
    for rec in traces:
        p = rec["party"]
        if p not in correct:
            continue
        ev = rec["ev"]
        t = rec["t"]
        if ev == entry_ev:
            tx = rec["tx"]
            if tx not in entry or t < entry[tx]:
                entry[tx] = t
        elif ev == "of_broadcast":
            first_submit = t if first_submit is None else min(first_submit, t)
        elif ev == "batch":
            for tx in rec["txs"]:
                delivered_at[p].setdefault(tx, t)
        elif ev == "status":
            status_t[(p, rec["round"])] = t
        elif ev == "decide":
            key = (p, rec["round"])
            decide_t[key] = t
            if key in status_t:
                consensus.append(t - status_t[key])
        elif ev == "graph":
            key = (p, rec["round"])
            if key in decide_t:
                graph.append(t - decide_t[key])

    lat = [
        t - entry[tx]
        for per_party in delivered_at.values()
        for tx, t in per_party.items()
        if tx in entry
    ]
    common = set.intersection(*(set(d) for d in delivered_at.values())) if delivered_at else set()
    last = max((t for d in delivered_at.values() for t in d.values()), default=0.0)
    span = last - (first_submit or 0.0)
    throughput = 1000.0 * len(common) / span if span > 0 else 0.0
    arr = np.asarray(lat, dtype=float)
    rounds = max((r for (_, r) in decide_t), default=0)
    return MetricsReport(
        protocol=protocol,
        n=n,
        injected=injected,
        delivered=len(common),
        throughput=throughput,
        latency_mean=float(arr.mean()) if arr.size else 0.0,
        latency_median=float(np.median(arr)) if arr.size else 0.0,
        latency_p99=float(np.percentile(arr, 99)) if arr.size else 0.0,
        consensus_ms=float(np.mean(consensus)) if consensus else 0.0,
        graph_ms=float(np.mean(graph)) if graph else 0.0,
        rounds=rounds,
        span_ms=span,
        counters=dict(counters or {}),
    )


def write_csv(reports: list[MetricsReport], extra: list[dict] | None = None) -> str:
    rows = [r.row() for r in reports]
    if extra is not None:
        rows = [{**e, **r} for e, r in zip(extra, rows)]
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
