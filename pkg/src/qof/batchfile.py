"""Signed delivered-batch files and the contract-style verifier for them.

A file is canonical JSON (sorted keys, no whitespace)::

    {"batches": [{"round": r, "seq": s, "txs": [hex, ...]}, ...],
     "f": f, "format": "qof-batches/1", "n": n,
     "signatures": [{"party": p, "sig": hex}, ...]}

Each signature covers the canonical serialization of the same object with
the ``signatures`` key removed. The verifier accepts only if the bytes are
exactly canonical (signatures in lowercase hex), every listed signature is valid, signers are distinct
parties, and there are at least f+1 of them. Only then are the
transactions "executed", i.e. appended to a ledger in batch order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from qof.core import DecodeError, Ed25519Scheme, Transaction
from qof.core import _derive as derive
from qof.engine import DeliveredBatch

FORMAT = "qof-batches/1"


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def _body(n: int, f: int, batches: Sequence[DeliveredBatch]) -> dict:
    return {
        "format": FORMAT,
        "n": n,
        "f": f,
        "batches": [
            {"round": b.round, "seq": b.seq, "txs": [tx.to_bytes().hex() for tx in b.txs]} for b in batches
        ],
    }


def signing_keys(n: int, seed: int) -> Ed25519Scheme:
    """Ordering-node signing keys, kept apart from the protocol keys."""
    return Ed25519Scheme([derive(seed, "batch-signing", i) for i in range(n)])


def make_batch_file(
    batches: Sequence[DeliveredBatch], n: int, f: int, scheme: Ed25519Scheme, signers: Sequence[int]
) -> bytes:
    body = _body(n, f, batches)
    msg = canonical(body)
    body["signatures"] = [{"party": p, "sig": scheme.sign(p, msg).hex()} for p in sorted(set(signers))]
    return canonical(body)


def keys_document(scheme: Ed25519Scheme) -> bytes:
    return canonical({"scheme": "ed25519", "public_keys": [k.hex() for k in scheme.public_keys()]})


def load_public_keys(data: bytes) -> Ed25519Scheme:
    doc = json.loads(data)
    if doc.get("scheme") != "ed25519":
        raise ValueError("only ed25519 keys are supported")
    return Ed25519Scheme.from_public_keys([bytes.fromhex(k) for k in doc["public_keys"]])


@dataclass
class Verdict:
    accepted: bool
    reason: str
    signers: list[int] = field(default_factory=list)
    ledger: list[Transaction] = field(default_factory=list)


def verify_batch_file(data: bytes, public: Ed25519Scheme) -> Verdict:
    """Accept iff the file is canonical and carries f+1 distinct valid signatures."""
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return Verdict(False, "not JSON")
    if not isinstance(doc, dict) or canonical(doc) != data:
        return Verdict(False, "not in canonical form")
    try:
        n, f, sigs = doc["n"], doc["f"], doc["signatures"]
        if doc["format"] != FORMAT:
            return Verdict(False, f"unknown format {doc['format']!r}")
        if not (type(n) is int and type(f) is int and n > 3 * f >= 0):
            return Verdict(False, "bad n/f header")
        if n != len(public.public_keys()):
            return Verdict(False, f"file is for n={n}, key set has {len(public.public_keys())}")
        body = {k: v for k, v in doc.items() if k != "signatures"}
        msg = canonical(body)
        signers = []
        for entry in sigs:
            if set(entry) != {"party", "sig"}:
                return Verdict(False, "malformed signature entry", signers)
            p, sig = entry["party"], bytes.fromhex(entry["sig"])
            # signatures sit outside the signed body, so only one spelling is allowed
            if sig.hex() != entry["sig"]:
                return Verdict(False, "signature is not lowercase hex", signers)
            if not (type(p) is int and 0 <= p < n) or p in signers:
                return Verdict(False, f"bad or repeated signer {p!r}")
            if not public.verify(p, msg, sig):
                return Verdict(False, f"invalid signature from party {p}", signers)
            signers.append(p)
        if len(signers) < f + 1:
            return Verdict(False, f"{len(signers)} signatures, need f+1={f + 1}", signers)
        ledger = [
            Transaction.from_bytes(bytes.fromhex(raw)) for batch in doc["batches"] for raw in batch["txs"]
        ]
    except (KeyError, TypeError, ValueError, AttributeError, DecodeError) as exc:
        return Verdict(False, f"malformed file: {exc}")
    return Verdict(True, "accepted", signers, ledger)
