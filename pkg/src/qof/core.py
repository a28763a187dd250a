"""Identities, parameters, transactions, vector clocks and crypto primitives.

Everything here is an immutable value. Signed structures are serialized with
:func:`encode`, a tagged length-prefixed format with fixed-width big-endian
integers, so that the bytes a signature covers are the same on every party.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

PartyId = int
Signature = bytes
Digest = bytes

MAX_PAYLOAD = 4096


class ConfigError(ValueError):
    """Raised for protocol parameters that violate the resilience bounds."""


@dataclass(frozen=True)
class Config:
    n: int
    f: int
    kappa: int = 0
    round_trigger: int = 1
    batch_cap: int = 20

    def __post_init__(self):
        if self.n < 1 or self.f < 0:
            raise ConfigError(f"invalid party count n={self.n}, f={self.f}")
        if self.n <= 3 * self.f:
            raise ConfigError(f"n={self.n} must exceed 3f={3 * self.f}")
        if self.kappa < 0:
            raise ConfigError(f"kappa must be non-negative, got {self.kappa}")
        if self.round_trigger < 1:
            raise ConfigError(f"round_trigger must be >= 1, got {self.round_trigger}")
        if self.batch_cap < 1:
            raise ConfigError(f"batch_cap must be >= 1, got {self.batch_cap}")

    @property
    def echo_quorum(self) -> int:
        # smallest integer strictly above (n + f) / 2
        return (self.n + self.f) // 2 + 1

    @property
    def parties(self) -> range:
        return range(self.n)


# --------------------------------------------------------------------------
# canonical serialization

_INT = b"i"
_BYTES = b"b"
_STR = b"s"
_LIST = b"l"
_NONE = b"n"
_TRUE = b"T"
_FALSE = b"F"

_pack_q = struct.Struct(">q").pack
_pack_I = struct.Struct(">I").pack
_unpack_q = struct.Struct(">q").unpack_from
_unpack_I = struct.Struct(">I").unpack_from


class DecodeError(ValueError):
    pass


def _encode_into(out: list, obj) -> None:
    if obj is None:
        out.append(_NONE)
    elif obj is True:
        out.append(_TRUE)
    elif obj is False:
        out.append(_FALSE)
    elif isinstance(obj, int):
        out.append(_INT)
        out.append(_pack_q(obj))
    elif isinstance(obj, (bytes, bytearray)):
        out.append(_BYTES)
        out.append(_pack_I(len(obj)))
        out.append(bytes(obj))
    elif isinstance(obj, str):
        raw = obj.encode("utf-8")
        out.append(_STR)
        out.append(_pack_I(len(raw)))
        out.append(raw)
    elif isinstance(obj, (tuple, list)):
        out.append(_LIST)
        out.append(_pack_I(len(obj)))
        for item in obj:
            _encode_into(out, item)
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def encode(obj) -> bytes:
    """Serialize ints, bytes, str, None, bools and nested tuples/lists."""
    out: list = []
    _encode_into(out, obj)
    return b"".join(out)


def _decode_at(buf: bytes, pos: int):
    if pos >= len(buf):
        raise DecodeError("truncated input")
    tag = buf[pos : pos + 1]
    pos += 1
    if tag == _INT:
        if pos + 8 > len(buf):
            raise DecodeError("truncated int")
        return _unpack_q(buf, pos)[0], pos + 8
    if tag in (_BYTES, _STR):
        if pos + 4 > len(buf):
            raise DecodeError("truncated length")
        (size,) = _unpack_I(buf, pos)
        pos += 4
        if pos + size > len(buf):
            raise DecodeError("truncated payload")
        raw = buf[pos : pos + size]
        if tag == _STR:
            try:
                return raw.decode("utf-8"), pos + size
            except UnicodeDecodeError as exc:
                raise DecodeError(str(exc)) from None
        return raw, pos + size
    if tag == _LIST:
        if pos + 4 > len(buf):
            raise DecodeError("truncated count")
        (count,) = _unpack_I(buf, pos)
        pos += 4
        items = []
        for _ in range(count):
            item, pos = _decode_at(buf, pos)
            items.append(item)
        return tuple(items), pos
    if tag == _NONE:
        return None, pos
    if tag == _TRUE:
        return True, pos
    if tag == _FALSE:
        return False, pos
    raise DecodeError(f"unknown tag {tag!r} at offset {pos - 1}")


def decode(buf: bytes):
    """Inverse of :func:`encode`; lists come back as tuples."""
    if isinstance(buf, bytes):
        return _decode_cached(buf)
    return decode_uncached(bytes(buf))


def decode_uncached(buf: bytes):
    """:func:`decode` without the memo, for one-off buffers such as link frames."""
    obj, pos = _decode_at(buf, 0)
    if pos != len(buf):
        raise DecodeError(f"{len(buf) - pos} trailing bytes")
    return obj


# Broadcast bodies reach every party, and decoded values are immutable.
_decode_cached = functools.lru_cache(maxsize=8192)(decode_uncached)


def digest(data: bytes) -> Digest:
    return hashlib.sha256(data).digest()


# --------------------------------------------------------------------------
# transactions and clocks


@dataclass(frozen=True)
class Transaction:
    client_id: int
    client_seq: int
    payload: bytes = b""
    id: str = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.payload, (bytes, bytearray)):
            raise TypeError("payload must be bytes")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")
        raw = encode((self.client_id, self.client_seq, bytes(self.payload)))
        object.__setattr__(self, "_raw", raw)
        object.__setattr__(self, "id", digest(raw).hex())

    def to_bytes(self) -> bytes:
        return self._raw

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Transaction":
        try:
            client_id, client_seq, payload = decode(raw)
        except (ValueError, TypeError) as exc:
            raise DecodeError(f"not a transaction: {exc}") from None
        if not (isinstance(client_id, int) and isinstance(client_seq, int)):
            raise DecodeError("not a transaction")
        if not isinstance(payload, bytes):
            raise DecodeError("not a transaction")
        return cls(client_id, client_seq, payload)


def tx_id_of(raw: bytes) -> str:
    """Id of a serialized transaction without decoding it."""
    return digest(raw).hex()


@dataclass(frozen=True)
class VectorClock:
    counts: tuple[int, ...]

    @classmethod
    def zeros(cls, n: int) -> "VectorClock":
        return cls((0,) * n)

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(self.counts))
        if any(c < 0 for c in self.counts):
            raise ValueError("vector clock entries must be non-negative")

    def __len__(self):
        return len(self.counts)

    def __getitem__(self, j: int) -> int:
        return self.counts[j]

    def increment(self, j: int) -> "VectorClock":
        counts = list(self.counts)
        counts[j] += 1
        return VectorClock(tuple(counts))

    def __le__(self, other: "VectorClock") -> bool:
        if len(self) != len(other):
            raise ValueError("vector clocks of different length")
        return all(a <= b for a, b in zip(self.counts, other.counts))

    def __lt__(self, other: "VectorClock") -> bool:
        return self <= other and self.counts != other.counts

    def __ge__(self, other: "VectorClock") -> bool:
        return other <= self

    def __gt__(self, other: "VectorClock") -> bool:
        return other < self

    def concurrent(self, other: "VectorClock") -> bool:
        return not (self <= other) and not (other <= self)


# --------------------------------------------------------------------------
# signatures


class HmacScheme:
    """Keyed-hash signatures for simulation.

    Verification needs the signer's secret, so the registry plays the role of
    a trusted verifier. Only sound inside a single process; use
    :class:`Ed25519Scheme` where signatures leave the simulator.
    """

    name = "hmac"

    def __init__(self, secrets: Sequence[bytes]):
        self._secrets = list(secrets)

    def sign(self, party: PartyId, message: bytes) -> Signature:
        return hmac.digest(self._secrets[party], message, "sha256")

    def verify(self, party: PartyId, message: bytes, sig: Signature) -> bool:
        if not isinstance(sig, (bytes, bytearray)) or len(sig) != 32:
            return False
        if not 0 <= party < len(self._secrets):
            return False
        return hmac.compare_digest(self.sign(party, message), bytes(sig))

    def public_keys(self) -> list[bytes]:
        return [digest(s) for s in self._secrets]


class Ed25519Scheme:
    name = "ed25519"

    def __init__(self, seeds: Sequence[bytes] | None = None, public: Sequence[bytes] | None = None):
        if seeds is not None:
            self._private = [Ed25519PrivateKey.from_private_bytes(s) for s in seeds]
            self._public = [k.public_key() for k in self._private]
        elif public is not None:
            self._private = []
            self._public = [Ed25519PublicKey.from_public_bytes(p) for p in public]
        else:
            raise ValueError("need private seeds or public keys")

    @classmethod
    def from_public_keys(cls, public: Sequence[bytes]) -> "Ed25519Scheme":
        return cls(public=public)

    def sign(self, party: PartyId, message: bytes) -> Signature:
        if not self._private:
            raise RuntimeError("verification-only key set")
        return self._private[party].sign(message)

    def verify(self, party: PartyId, message: bytes, sig: Signature) -> bool:
        if not 0 <= party < len(self._public):
            return False
        try:
            self._public[party].verify(bytes(sig), message)
        except (InvalidSignature, ValueError, TypeError):
            return False
        return True

    def public_keys(self) -> list[bytes]:
        return [k.public_bytes(Encoding.Raw, PublicFormat.Raw) for k in self._public]


def _derive(seed: int | bytes, *labels) -> bytes:
    base = seed if isinstance(seed, bytes) else str(seed).encode()
    return hashlib.sha256(encode((base, *labels))).digest()


class KeyMaterial:
    """Signing keys for every party plus per-link MAC secrets.

    Keys are derived deterministically from ``seed`` so simulations replay
    bit-for-bit. ``scheme`` selects ``"hmac"`` (fast, simulation only) or
    ``"ed25519"``.
    """

    def __init__(self, n: int, seed: int | bytes = 0, scheme: str = "hmac"):
        self.n = n
        self.seed = seed
        seeds = [_derive(seed, "sign", i) for i in range(n)]
        if scheme == "hmac":
            self.scheme = HmacScheme(seeds)
        elif scheme == "ed25519":
            self.scheme = Ed25519Scheme(seeds)
        else:
            raise ValueError(f"unknown signature scheme {scheme!r}")
        self._links = {
            (i, j): _derive(seed, "link", i, j) for i in range(n) for j in range(n)
        }

    def sign(self, party: PartyId, message: bytes) -> Signature:
        return self.scheme.sign(party, message)

    def verify(self, party: PartyId, message: bytes, sig: Signature) -> bool:
        return self.scheme.verify(party, message, sig)

    def link_secret(self, sender: PartyId, receiver: PartyId) -> bytes:
        return self._links[(sender, receiver)]

    def public_keys(self) -> list[bytes]:
        return self.scheme.public_keys()


def sign(keys: KeyMaterial, party: PartyId, message: bytes) -> Signature:
    return keys.sign(party, message)


def verify(keys: KeyMaterial, party: PartyId, message: bytes, sig: Signature) -> bool:
    return keys.verify(party, message, sig)


def distinct(items: Iterable[int]) -> bool:
    seen = set()
    for x in items:
        if x in seen:
            return False
        seen.add(x)
    return True
