import pytest
from conftest import Cluster

from qof.core import Config, KeyMaterial, encode
from qof.vbc import (
    ClockMatrix,
    ProtocolMisuse,
    SequencerABC,
    ValidatedConsensus,
    VbcState,
    predicate_P,
    status_statement,
)

CFG = Config(4, 1)
KEYS = KeyMaterial(4, seed=0)


def matrix(r, parties, counts=(1, 0, 0, 0), keys=KEYS):
    return ClockMatrix.from_rows(r, [(p, counts, keys.sign(p, status_statement(r, counts))) for p in parties])


def test_predicate_accepts_n_minus_f_signed_rows():
    assert predicate_P(1, matrix(1, [0, 1, 2]), KEYS, CFG)
    assert predicate_P(1, matrix(1, [0, 1, 2, 3]), KEYS, CFG)


def test_predicate_rejections():
    assert not predicate_P(1, matrix(1, [0, 1]), KEYS, CFG)
    assert not predicate_P(2, matrix(1, [0, 1, 2]), KEYS, CFG)
    other = KeyMaterial(4, seed=1)
    assert not predicate_P(1, matrix(1, [0, 1, 2], keys=other), KEYS, CFG)
    m = matrix(1, [0, 1, 2])
    dup = ClockMatrix(1, (m.rows[0], m.rows[0], m.rows[1]))
    assert not predicate_P(1, dup, KEYS, CFG)
    # a row whose counts differ from what was signed
    p, c, s = m.rows[0]
    assert not predicate_P(1, ClockMatrix(1, ((p, (9, 0, 0, 0), s),) + m.rows[1:]), KEYS, CFG)
    assert not predicate_P(1, matrix(1, [0, 1, 2], counts=(1, 0)), KEYS, CFG)
    assert not predicate_P(1, "not a matrix", KEYS, CFG)


def test_clock_matrix_wire_roundtrip():
    m = matrix(3, [2, 0, 1])
    assert [p for p, _, _ in m.rows] == [0, 1, 2]
    assert ClockMatrix.from_wire(m.to_wire()) == m
    assert m.column(0) == [1, 1, 1]
    assert set(m.L) == {0, 1, 2} and set(m.Sigma) == {0, 1, 2}
    with pytest.raises(ValueError):
        ClockMatrix.from_wire(("x", ()))


def test_vbc_state_invariant():
    VbcState().check()
    VbcState(True, 1, 0).check()
    for bad in (VbcState(False, 1, 0), VbcState(True, 0, 0), VbcState(False, 2, 0), VbcState(False, 0, 1)):
        with pytest.raises(AssertionError):
            bad.check()


class Loopback:
    """ValidatedConsensus wired to a list standing in for atomic broadcast."""

    def __init__(self):
        self.sent = []
        self.decided = []
        self.v = ValidatedConsensus(
            self.sent.append, lambda r, L: predicate_P(r, L, KEYS, CFG), lambda r, L: self.decided.append((r, L))
        )


def test_vbc_decides_first_valid_value():
    lb = Loopback()
    a, b = matrix(1, [0, 1, 2]), matrix(1, [1, 2, 3])
    lb.v.propose(1, a)
    assert lb.v.state == VbcState(True, 1, 0)
    lb.v.on_abc_deliver(encode(("vbc", 1, matrix(1, [0]).to_wire())))  # invalid, skipped
    lb.v.on_abc_deliver(encode(("vbc", 1, b.to_wire())))
    lb.v.on_abc_deliver(encode(("vbc", 1, a.to_wire())))
    assert lb.decided == [(1, b)]
    assert lb.v.state == VbcState(False, 1, 1)
    assert lb.v.stats.discarded == 2


def test_vbc_buffers_values_for_future_rounds():
    lb = Loopback()
    early = matrix(1, [1, 2, 3])
    lb.v.on_abc_deliver(encode(("vbc", 1, early.to_wire())))
    assert lb.v.early_value(1) == early and not lb.decided
    lb.v.propose(1, matrix(1, [0, 1, 2]))
    assert lb.decided == [(1, early)]


def test_vbc_misuse():
    lb = Loopback()
    with pytest.raises(ProtocolMisuse):
        lb.v.propose(2, matrix(2, [0, 1, 2]))
    with pytest.raises(ProtocolMisuse):
        lb.v.propose(1, matrix(1, [0]))
    lb.v.propose(1, matrix(1, [0, 1, 2]))
    with pytest.raises(ProtocolMisuse):
        lb.v.propose(2, matrix(2, [0, 1, 2]))
    lb.v.on_abc_deliver(b"garbage")
    lb.v.on_abc_deliver(encode(("xyz", 1, matrix(1, [0, 1, 2]).to_wire())))
    assert lb.v.stats.discarded == 2


def abc_cluster(n=4, f=1, delay=(0.5, 2.0), seed=0, timeout=10.0):
    c = Cluster(n, f, delay=delay, seed=seed)
    logs = [[] for _ in range(n)]
    abcs = []
    for p in range(n):
        a = SequencerABC(c.rts[p], logs[p].append, base_timeout=timeout)
        c.modules[p]["A"] = a
        abcs.append(a)
    return c, abcs, logs


@pytest.mark.parametrize("seed", range(5))
def test_abc_total_order(seed):
    c, abcs, logs = abc_cluster(seed=seed)
    for k in range(40):
        abcs[k % 4].broadcast(b"v%d" % k)
    c.run(until=5000)
    assert all(len(log) == 40 for log in logs)
    assert logs[0] == logs[1] == logs[2] == logs[3]


def test_abc_leader_crash_rotates():
    c, abcs, logs = abc_cluster()
    c.net.crash(0)  # leader of view 0
    for k in range(10):
        abcs[1 + k % 3].broadcast(b"v%d" % k)
    c.run(until=5000)
    assert all(len(logs[p]) == 10 for p in (1, 2, 3))
    assert logs[1] == logs[2] == logs[3]
    assert all(abcs[p].view >= 1 for p in (1, 2, 3))
    assert all(abcs[p].stats.view_changes >= 1 for p in (1, 2, 3))


def test_abc_leader_crash_mid_stream_keeps_prefix():
    c, abcs, logs = abc_cluster(seed=3)
    for k in range(20):
        abcs[1 + k % 3].broadcast(b"v%d" % k)
    c.run(until=3)
    before = list(logs[1])
    c.net.crash(0)
    for k in range(20, 30):
        abcs[1 + k % 3].broadcast(b"v%d" % k)
    c.run(until=10000)
    assert logs[1][: len(before)] == before
    assert logs[1] == logs[2] == logs[3]
    assert sorted(logs[1]) == sorted(b"v%d" % k for k in range(30))


def test_abc_admit_filters_values():
    c = Cluster(4, 1)
    logs = [[] for _ in range(4)]
    abcs = []
    for p in range(4):
        a = SequencerABC(c.rts[p], logs[p].append, admit=lambda v: not v.startswith(b"bad"))
        c.modules[p]["A"] = a
        abcs.append(a)
    abcs[1].broadcast(b"bad1")
    abcs[1].broadcast(b"ok")
    c.run(until=1000)
    assert all(log == [b"ok"] for log in logs)
