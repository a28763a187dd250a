import pytest

from qof.core import Config, Transaction
from qof.engine import Cut, DeliveredBatch, compute_cut
from qof.harness import FaultSpec, Scenario, Simulation, check_all, simulate
from qof.harness.oracle import delivered_logs
from qof.vbc import ClockMatrix


def scenario(**kw):
    base = dict(config=Config(4, 1, 0), seed=3, n_clients=2, tx_count=12, payload_size=16, delay_range=(0.5, 1.5))
    base.update(kw)
    return Scenario(**base)


def test_compute_cut_from_clock_matrix():
    L = ClockMatrix(1, ((0, (5, 2, 0, 1), b""), (1, (4, 2, 1, 1), b""), (2, (5, 3, 0, 0), b"")))
    assert compute_cut(L, 1, 4) == (5, 2, 0, 1)
    assert compute_cut(L, 0, 4) == (5, 3, 1, 1)
    assert compute_cut([], 1, 2) == (0, 0)


def test_cut_and_batch_types():
    c = Cut((1, 2), 3)
    assert c[1] == 2 and len(c) == 2
    tx = Transaction(0, 0, b"")
    assert DeliveredBatch(1, 0, (tx,)).ids == (tx.id,)
    with pytest.raises(ValueError):
        DeliveredBatch(1, 0, ())


@pytest.mark.parametrize("protocol", ["qof", "baseline"])
def test_fault_free_run_delivers_everything(protocol):
    res = simulate(scenario(), protocol)
    assert res.quiescent
    assert res.metrics.delivered == 12
    assert check_all(res.traces, complete=True) == []
    logs = {p: [b.ids for b in res.parties[p].delivered_log] for p in res.correct}
    assert len(set(map(tuple, logs.values()))) == 1


def test_qof_batches_are_disjoint_and_cover_input():
    res = simulate(scenario(tx_count=20, n_clients=3))
    for log in delivered_logs(res.traces).values():
        flat = [tx for b in log for tx in b]
        assert len(flat) == len(set(flat)) == 20


@pytest.mark.parametrize("kappa", [0, 1, 2])
def test_kappa_variants(kappa):
    res = simulate(scenario(config=Config(7, 2, kappa), seed=kappa))
    assert res.metrics.delivered == 12
    assert check_all(res.traces, complete=True) == []


def test_crashed_party_does_not_block():
    res = simulate(scenario(faults=(FaultSpec(0, "crash", {"at": 5.0}),)))
    assert res.metrics.delivered == 12
    assert res.correct == [1, 2, 3]
    assert check_all(res.traces, complete=res.quiescent) == []


def test_round_trigger_tail_is_flushed():
    res = simulate(scenario(config=Config(4, 1, 0, round_trigger=50), tx_count=5))
    assert res.metrics.delivered == 5


def test_manual_rounds_wait_for_start():
    sim = Simulation(scenario(auto_rounds=False, tx_count=4, duration=200.0))
    res = sim.run()
    assert res.metrics.delivered == 0
    assert all(p.round == 0 for p in sim.parties)


def test_status_messages_are_checked():
    sim = Simulation(scenario(tx_count=0))
    party = sim.parties[0]
    party.on_status(1, 1, (0, 0, 0, 0), b"forged")
    party.on_status(1, 1, (0, 0), b"x")
    party.on_status(1, "r", (0, 0, 0, 0), b"x")
    assert party.dropped == 3
    party.handle(1, b"\xff")
    assert party.dropped == 4
