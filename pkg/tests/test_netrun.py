import pytest

from qof.core import Config
from qof.harness import FaultSpec, Scenario
from qof.harness.oracle import oracle_abc
from qof.netrun import run_tcp_cluster


@pytest.mark.parametrize("protocol", ["qof", "baseline"])
def test_tcp_cluster_delivers_in_one_order(protocol):
    sc = Scenario(Config(4, 1), seed=2, tx_count=20, n_clients=2, client_rate=500.0)
    res = run_tcp_cluster(sc, protocol, timeout=30)
    assert res.completed
    assert len({tuple(log) for log in res.logs.values()}) == 1
    assert res.metrics.delivered == 20
    traces = [{"t": 0, "party": -1, "ev": "meta", "correct": [0, 1, 2, 3], "n": 4, "f": 1}] + res.traces
    assert oracle_abc(traces, complete=True) == []


def test_tcp_rejects_faults():
    sc = Scenario(Config(4, 1), faults=(FaultSpec(0, "mute"),))
    with pytest.raises(ValueError):
        run_tcp_cluster(sc)
