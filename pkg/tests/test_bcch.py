import itertools

from conftest import Cluster

from qof.bcch import FINAL, SEND, BcchChannel, EchoCertificate, echo_statement
from qof.core import Config, KeyMaterial, digest, encode


def make(n=4, f=1, seed=0, **kw):
    c = Cluster(n, f, seed=seed)
    delivered = [[] for _ in range(n)]
    chans = []
    for p in range(n):
        ch = BcchChannel(c.rts[p], lambda m, p=p: delivered[p].append(m), **kw)
        c.modules[p]["B"] = ch
        chans.append(ch)
    return c, chans, delivered


def test_fifo_delivery_everywhere():
    c, chans, delivered = make()
    for k in range(10):
        chans[1].broadcast(b"m%d" % k)
    chans[2].broadcast(b"other")
    c.run()
    for p in range(4):
        mine = [m.message for m in delivered[p] if m.from_process == 1]
        assert mine == [b"m%d" % k for k in range(10)]
        assert [m.round for m in delivered[p] if m.from_process == 1] == list(range(10))
        assert any(m.message == b"other" for m in delivered[p])


def test_delivery_with_one_silent_party():
    c, chans, delivered = make()
    c.modules[3].clear()
    chans[0].broadcast(b"x")
    c.run()
    assert all(len(delivered[p]) == 1 for p in range(3))


def test_invalid_messages_not_echoed():
    c, chans, delivered = make(is_valid=lambda m: m != b"bad")
    chans[0].broadcast(b"bad")
    c.run()
    assert all(not d for d in delivered)
    assert chans[0].backlog == 1


def test_backpressure():
    c, chans, _ = make(max_queue=2)
    assert chans[0].broadcast(b"a")  # becomes active immediately
    assert chans[0].broadcast(b"b") and chans[0].broadcast(b"c")
    assert not chans[0].broadcast(b"d")


def _cert(keys, cfg, sender, rnd, msg, signers):
    stmt = echo_statement(sender, rnd, digest(msg))
    return EchoCertificate(sender, rnd, digest(msg), tuple((p, keys.sign(p, stmt)) for p in signers))


def test_certificate_validation():
    cfg, keys = Config(4, 1), KeyMaterial(4, seed=0)
    assert _cert(keys, cfg, 3, 0, b"m", [0, 1, 2]).validate(keys, cfg)
    assert not _cert(keys, cfg, 3, 0, b"m", [0, 1]).validate(keys, cfg)
    assert not _cert(keys, cfg, 3, 0, b"m", [0, 0, 3]).validate(keys, cfg)
    good = _cert(keys, cfg, 3, 0, b"m", [0, 1, 2])
    moved = EchoCertificate(3, 1, good.digest, good.signatures)
    assert not moved.validate(keys, cfg)
    stray = EchoCertificate(3, 0, good.digest, good.signatures[:2] + ((9, good.signatures[2][1]),))
    assert not stray.validate(keys, cfg)


def test_quorum_enumeration_n4_f1():
    """No echo assignment lets two messages reach Q=3 when correct parties echo once."""
    n, f = 4, 1
    q = Config(n, f).echo_quorum
    assert q == 3
    for faulty in range(n):
        correct = [p for p in range(n) if p != faulty]
        # each correct party echoes m1, m2 or nothing; the faulty party signs both
        for choice in itertools.product((None, "m1", "m2"), repeat=len(correct)):
            m1 = 1 + sum(c == "m1" for c in choice)
            m2 = 1 + sum(c == "m2" for c in choice)
            assert not (m1 >= q and m2 >= q)


def test_forged_final_rejected_by_receivers():
    c, chans, delivered = make()
    keys, cfg = c.keys, c.cfg
    # sender 3 and one correct echo for an alternative, padded with a duplicate
    stmt = echo_statement(3, 0, digest(b"alt"))
    sigs = ((0, keys.sign(0, stmt)), (3, keys.sign(3, stmt)), (3, keys.sign(3, stmt)))
    forged = encode(("B", FINAL, 3, 0, b"alt", (3, 0, digest(b"alt"), sigs)))
    for p in range(3):
        c.net.al_send(3, p, forged)
    c.run()
    assert all(not d for d in delivered[:3])
    assert all(chans[p].dropped == 1 for p in range(3))


def test_equivocating_sender_certifies_at_most_one():
    c, chans, delivered = make()
    # party 3 sends different SENDs to two halves
    for p, msg in ((0, b"one"), (1, b"one"), (2, b"two")):
        c.net.al_send(3, p, encode(("B", SEND, 0, msg)))
    c.modules[3]["B"] = chans[3]
    chans[3].active = (0, b"one", digest(b"one"), {})
    c.run()
    got = {m.message for p in range(3) for m in delivered[p] if m.from_process == 3}
    assert got <= {b"one"}
    # the echo for "two" from party 2 can never join a quorum
    assert chans[2].echoed[(3, 0)] == digest(b"two")


def test_out_of_order_finals_are_buffered_and_requests_recover():
    c, chans, delivered = make()
    for k in range(3):
        chans[0].broadcast(b"%d" % k)
    c.run()
    # a fresh receiver state gets instance 2 first, then 0 and 1 through a request
    late = BcchChannel(c.rts[1], lambda m: got.append(m))
    got = []
    c.modules[1]["B"] = late
    msg, cert = chans[2].certified(0, 2)
    c.net.al_send(2, 1, encode(("B", FINAL, 0, 2, msg, cert.to_wire())))
    c.run()
    assert got == []
    late.request(0, 0, 2)
    c.run()
    assert [m.message for m in got] == [b"0", b"1", b"2"]


def test_window_bounds_buffer():
    c, chans, delivered = make(window=2)
    for k in range(4):
        chans[0].broadcast(b"%d" % k)
    c.run()
    late = BcchChannel(c.rts[1], lambda m: None, window=2)
    c.modules[1]["B"] = late
    msg, cert = chans[2].certified(0, 3)
    c.net.al_send(2, 1, encode(("B", FINAL, 0, 3, msg, cert.to_wire())))
    c.run()
    assert late.dropped == 1 and not late.buffered


def test_malformed_messages_counted():
    c, chans, _ = make()
    for bad in (("B", "NOPE"), ("B", SEND, 0), ("B", FINAL, 9, 0, b"x", ()), ("B", FINAL, 0, 0, b"x", 5)):
        c.net.al_send(1, 0, encode(bad))
    c.run()
    assert chans[0].dropped == 4
