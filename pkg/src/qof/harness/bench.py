"""Benchmark sweeps comparing QOF against the plain sequencer baseline.

Both protocols run in the same simulator with the same seed, load
generator and cost model; only the fairness layer differs. Each point
submits a burst of ``tx_count`` transactions from four clients.
"""

from __future__ import annotations

from dataclasses import dataclass

from qof.core import Config
from qof.harness.metrics import MetricsReport
from qof.harness.scenario import Scenario
from qof.harness.sim import simulate

SWEEPS = {
    "servers": (4, 8, 16),
    "payload": (256, 512, 1024, 2048),
    "delay": (0, 5, 10, 15, 20),
}

DEFAULTS = {"n": 4, "payload": 256, "delay": 1.0, "tx_count": 100}


@dataclass
class BenchPoint:
    sweep: str
    value: float
    qof: MetricsReport
    baseline: MetricsReport | None

    @property
    def throughput_overhead(self) -> float | None:
        """Relative throughput loss of QOF against the baseline."""
        if self.baseline is None or not self.baseline.throughput:
            return None
        return 1.0 - self.qof.throughput / self.baseline.throughput

    @property
    def latency_overhead_ms(self) -> float | None:
        if self.baseline is None:
            return None
        return self.qof.latency_mean - self.baseline.latency_mean

    def row(self) -> dict:
        out = {
            "sweep": self.sweep,
            "value": self.value,
            "qof_throughput": round(self.qof.throughput, 3),
            "qof_latency_ms": round(self.qof.latency_mean, 3),
            "qof_latency_p99_ms": round(self.qof.latency_p99, 3),
            "qof_delivered": self.qof.delivered,
        }
        if self.baseline is not None:
            out.update(
                baseline_throughput=round(self.baseline.throughput, 3),
                baseline_latency_ms=round(self.baseline.latency_mean, 3),
                baseline_delivered=self.baseline.delivered,
                throughput_overhead=round(self.throughput_overhead, 4),
                latency_overhead_ms=round(self.latency_overhead_ms, 3),
            )
        return out


def bench_scenario(
    n: int = 4, payload: int = 256, delay: float = 1.0, tx_count: int = 100, seed: int = 1
) -> Scenario:
    """``delay`` is the mean one-way delay; links draw from [0.5d, 1.5d]."""
    return Scenario(
        config=Config(n, (n - 1) // 3, 0),
        seed=seed,
        n_clients=4,
        tx_count=tx_count,
        payload_size=payload,
        delay_range=(0.5 * delay, 1.5 * delay),
        client_rate=20_000.0,
        name=f"bench-n{n}-p{payload}-d{delay}",
    )


def bench_point(sweep: str, value, baseline: bool = True, seed: int = 1, tx_count: int | None = None) -> BenchPoint:
    params = dict(DEFAULTS)
    if tx_count is not None:
        params["tx_count"] = tx_count
    key = {"servers": "n", "payload": "payload", "delay": "delay"}[sweep]
    params[key] = value
    sc = bench_scenario(params["n"], params["payload"], params["delay"], params["tx_count"], seed)
    qof = simulate(sc, "qof").metrics
    base = simulate(sc, "baseline").metrics if baseline else None
    return BenchPoint(sweep, value, qof, base)


def run_sweep(
    sweep: str, values=None, baseline: bool = True, seed: int = 1, tx_count: int | None = None
) -> list[BenchPoint]:
    if sweep not in SWEEPS:
        raise ValueError(f"unknown sweep {sweep!r}; choose from {sorted(SWEEPS)}")
    values = SWEEPS[sweep] if values is None else values
    return [bench_point(sweep, v, baseline, seed, tx_count) for v in values]


def gnuplot_data(points: list[BenchPoint], column: str) -> str:
    """Whitespace-separated ``value column`` pairs with a comment header."""
    lines = [f"# {points[0].sweep if points else ''} {column}"]
    for pt in points:
        row = pt.row()
        if column in row:
            lines.append(f"{pt.value} {row[column]}")
    return "\n".join(lines) + "\n"
