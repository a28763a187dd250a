"""Fairness overhead against a plain sequencer as the party count grows."""

import numpy as np

from qof.harness.bench import run_sweep

if __name__ == "__main__":
    points = run_sweep("servers", tx_count=60)
    n = np.array([pt.value for pt in points])
    qof = np.array([pt.qof.throughput for pt in points])
    base = np.array([pt.baseline.throughput for pt in points])
    lat = np.array([pt.latency_overhead_ms for pt in points])

    for row in zip(n, qof, base, 1 - qof / base, lat):
        print("n=%2d  qof %8.1f tx/s  baseline %8.1f tx/s  loss %5.1f%%  +%.1f ms" % (row[0], row[1], row[2], 100 * row[3], row[4]))
