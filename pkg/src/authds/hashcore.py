"""Canonical encoding, domain-separated hashing and signed time-stamped digests.

Every hashed value goes through :func:`encode` first.  The encoding is a
tag byte, a big-endian u32 payload length, then the payload, so it is
self-delimiting and injective over the supported value kinds.
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives import serialization

from .errors import EncodingError, KeyError_, Rejected

DIGEST_SIZE = 32

TAG_INT = 0x01
TAG_ID = 0x02
TAG_NIL = 0x03
TAG_STR = 0x04
TAG_DIGEST = 0x05
TAG_SEQ = 0x06
TAG_BYTES = 0x07
TAG_BOOL = 0x08

# hashing domains
D_NIL = 0x20
D_LEAF = 0x21
D_INTERNAL = 0x22
D_PREHASHED = 0x23
D_PROPERTY = 0x24
D_ATTR = 0x25
D_INTERBLOCK = 0x26
D_TRAVERSAL = 0x27
D_TOP = 0x28
D_EMPTY = 0x29
D_SIGN = 0x2A
D_ROUTING = 0x2B

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1

DEFAULT_CLOCK_SKEW = 5
DEFAULT_MAX_AGE = 300

HASH_NAME = os.environ.get("ADS_HASH", "sha256")
_ALLOWED_HASHES = ("sha256", "sha3_256", "blake2s")
if HASH_NAME not in _ALLOWED_HASHES:
    raise ValueError(f"ADS_HASH must be one of {_ALLOWED_HASHES}, got {HASH_NAME!r}")

_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")


class Id(int):
    """A node identifier; encodes under its own tag so ``Id(3) != 3`` on the wire."""

    __slots__ = ()

    def __repr__(self) -> str:
        return f"Id({int(self)})"


class Digest(bytes):
    """Opaque 32-byte hash value."""

    def __new__(cls, value: bytes) -> "Digest":
        if len(value) != DIGEST_SIZE:
            raise EncodingError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def __repr__(self) -> str:
        return f"Digest({self.hex()[:16]}..)"


def _frame(tag: int, payload: bytes) -> bytes:
    return bytes((tag,)) + _U32.pack(len(payload)) + payload


def encode(value: Any) -> bytes:
    """Canonical encoding of nil, int, Id, str, Digest, bytes, bool and sequences."""
    t = type(value)
    if t is tuple or t is list:
        return _frame(TAG_SEQ, b"".join([encode(v) for v in value]))
    if t is Id:
        if not INT64_MIN <= value <= INT64_MAX:
            raise EncodingError(f"id out of 64-bit range: {int(value)}")
        return b"\x02\x00\x00\x00\x08" + _I64.pack(value)
    if t is Digest:
        return b"\x05\x00\x00\x00\x20" + value
    if value is None:
        return b"\x03\x00\x00\x00\x00"
    if t is bool:
        return b"\x08\x00\x00\x00\x01\x01" if value else b"\x08\x00\x00\x00\x01\x00"
    if t is str:
        return _frame(TAG_STR, value.encode("utf-8"))
    if isinstance(value, bool):
        return encode(bool(value))
    if isinstance(value, Id):
        return encode(Id(int(value)))
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise EncodingError(f"integer out of 64-bit range: {value}")
        return b"\x01\x00\x00\x00\x08" + _I64.pack(value)
    if isinstance(value, Digest):
        return b"\x05\x00\x00\x00\x20" + bytes(value)
    if isinstance(value, str):
        return _frame(TAG_STR, str(value).encode("utf-8"))
    if isinstance(value, (bytes, bytearray, memoryview)):
        return _frame(TAG_BYTES, bytes(value))
    if isinstance(value, (tuple, list)):
        return _frame(TAG_SEQ, b"".join([encode(v) for v in value]))
    raise EncodingError(f"unsupported value kind: {type(value).__name__}")


def _decode_at(buf: bytes, pos: int) -> tuple[Any, int]:
    if pos + 5 > len(buf):
        raise EncodingError("truncated header")
    tag = buf[pos]
    (length,) = _U32.unpack_from(buf, pos + 1)
    start = pos + 5
    end = start + length
    if end > len(buf):
        raise EncodingError("truncated payload")
    payload = buf[start:end]
    if tag == TAG_NIL:
        if length:
            raise EncodingError("nil with payload")
        return None, end
    if tag in (TAG_INT, TAG_ID):
        if length != 8:
            raise EncodingError("integer payload must be 8 bytes")
        (v,) = _I64.unpack(payload)
        return (Id(v) if tag == TAG_ID else v), end
    if tag == TAG_BOOL:
        if payload not in (b"\x00", b"\x01"):
            raise EncodingError("bad bool payload")
        return payload == b"\x01", end
    if tag == TAG_STR:
        try:
            return payload.decode("utf-8"), end
        except UnicodeDecodeError as exc:
            raise EncodingError("bad utf-8") from exc
    if tag == TAG_DIGEST:
        return Digest(payload), end
    if tag == TAG_BYTES:
        return bytes(payload), end
    if tag == TAG_SEQ:
        items = []
        p = start
        while p < end:
            item, p = _decode_at(buf, p)
            items.append(item)
        if p != end:
            raise EncodingError("sequence overrun")
        return tuple(items), end
    raise EncodingError(f"unknown tag 0x{tag:02x}")


def decode(buf: bytes) -> Any:
    """Inverse of :func:`encode`; sequences come back as tuples."""
    value, end = _decode_at(bytes(buf), 0)
    if end != len(buf):
        raise EncodingError("trailing bytes after value")
    return value


def _h(*parts: bytes) -> Digest:
    hasher = hashlib.new(HASH_NAME)
    for part in parts:
        hasher.update(part)
    return Digest(hasher.digest())


def hash_bytes(domain: int, data: bytes) -> Digest:
    return _h(bytes((domain,)), data)


_NIL_DIGEST: Digest | None = None


def nil_digest() -> Digest:
    """Fixed hash standing in for a missing neighbour property."""
    global _NIL_DIGEST
    if _NIL_DIGEST is None:
        _NIL_DIGEST = _h(bytes((D_NIL,)), encode(None))
    return _NIL_DIGEST


def empty_digest() -> Digest:
    """Sentinel accumulation of an empty sequence."""
    return _h(bytes((D_EMPTY,)), encode(None))


def _enc_neighbor(prop: Sequence | None) -> bytes:
    return encode(nil_digest()) if prop is None else encode(prop)


def hash_leaf(pred: Sequence | None, cur: Sequence, succ: Sequence | None) -> Digest:
    if cur is None:
        raise ValueError("hash_leaf needs the current node property")
    return _h(bytes((D_LEAF,)), _enc_neighbor(pred), encode(cur), _enc_neighbor(succ))


_NIL_NEIGHBOR: bytes | None = None


def hash_leaf_encoded(pred: bytes | None, cur: bytes, succ: bytes | None) -> Digest:
    """:func:`hash_leaf` over already-encoded node properties."""
    global _NIL_NEIGHBOR
    if _NIL_NEIGHBOR is None:
        _NIL_NEIGHBOR = encode(nil_digest())
    return _h(b"\x21", _NIL_NEIGHBOR if pred is None else pred, cur, _NIL_NEIGHBOR if succ is None else succ)


def hash_internal(prop: Sequence, left: bytes, right: bytes) -> Digest:
    if left is None or right is None:
        raise ValueError("hash_internal needs both child labels")
    return _h(bytes((D_INTERNAL,)), encode(prop), left, right)


def hash_internal_prehashed(prop_digest: bytes, left: bytes, right: bytes) -> Digest:
    if prop_digest is None or left is None or right is None:
        raise ValueError("hash_internal_prehashed needs a property digest and both child labels")
    return _h(bytes((D_PREHASHED,)), prop_digest, left, right)


def hash_attribute(attr: Any) -> Digest:
    return _h(bytes((D_ATTR,)), encode(attr))


def hash_attribute_encoded(encoded: bytes | memoryview) -> Digest:
    """Same as :func:`hash_attribute` for an already-encoded value."""
    return _h(bytes((D_ATTR,)), encoded)


def hash_property_digests(attr_digests: Iterable[bytes]) -> Digest:
    digests = list(attr_digests)
    if not digests:
        raise ValueError("property needs at least one attribute")
    return _h(bytes((D_PROPERTY,)), *digests)


def hash_property(attrs: Sequence[Any]) -> Digest:
    """Hash of the concatenated per-attribute hashes."""
    if not attrs:
        raise ValueError("property needs at least one attribute")
    return hash_property_digests(hash_attribute(a) for a in attrs)


def hash_top(*digests: bytes) -> Digest:
    """Combine several structure digests under one signable value."""
    return _h(bytes((D_TOP,)), encode(tuple(Digest(d) for d in digests)))


# --------------------------------------------------------------------------- signatures


@dataclass(frozen=True)
class KeyPair:
    secret_key: bytes
    public_key: bytes

    @classmethod
    def generate(cls) -> "KeyPair":
        sk = Ed25519PrivateKey.generate()
        return cls.from_secret(
            sk.private_bytes(
                serialization.Encoding.Raw,
                serialization.PrivateFormat.Raw,
                serialization.NoEncryption(),
            )
        )

    @classmethod
    def from_secret(cls, secret: bytes) -> "KeyPair":
        try:
            sk = Ed25519PrivateKey.from_private_bytes(bytes(secret))
        except ValueError as exc:
            raise KeyError_(f"invalid secret key: {exc}") from exc
        pk = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return cls(bytes(secret), pk)


@dataclass(frozen=True)
class SignedDigest:
    digest: Digest
    timestamp: int
    signature: bytes
    signer_id: str = "source"

    def to_value(self) -> tuple:
        return (self.digest, self.timestamp, self.signature, self.signer_id)

    @classmethod
    def from_value(cls, value: Any) -> "SignedDigest":
        try:
            digest, ts, sig, signer = value
        except (TypeError, ValueError) as exc:
            raise EncodingError("malformed signed digest") from exc
        if not isinstance(digest, Digest) or type(ts) is not int or not isinstance(sig, bytes) or not isinstance(signer, str):
            raise EncodingError("malformed signed digest")
        return cls(digest, ts, sig, signer)


def _signing_message(digest: bytes, timestamp: int, signer_id: str) -> bytes:
    return bytes((D_SIGN,)) + encode((Digest(digest), timestamp, signer_id))


def sign_digest(digest: bytes, timestamp: int, keys: KeyPair, signer_id: str = "source") -> SignedDigest:
    if timestamp <= 0:
        raise ValueError("timestamp must be positive")
    try:
        sk = Ed25519PrivateKey.from_private_bytes(keys.secret_key)
    except ValueError as exc:
        raise KeyError_(f"invalid secret key: {exc}") from exc
    sig = sk.sign(_signing_message(digest, timestamp, signer_id))
    return SignedDigest(Digest(digest), timestamp, sig, signer_id)


def verify_signed_digest(
    sd: SignedDigest,
    public_key: bytes,
    now: int,
    max_age: int = DEFAULT_MAX_AGE,
    clock_skew: int = DEFAULT_CLOCK_SKEW,
) -> None:
    """Raise :class:`Rejected` unless the signature is valid and the timestamp fresh."""
    if max_age <= 0:
        raise ValueError("max_age must be positive")
    try:
        pk = Ed25519PublicKey.from_public_bytes(bytes(public_key))
        pk.verify(sd.signature, _signing_message(sd.digest, sd.timestamp, sd.signer_id))
    except (InvalidSignature, ValueError) as exc:
        raise Rejected("bad-signature") from exc
    if sd.timestamp <= 0 or now - sd.timestamp > max_age:
        raise Rejected("stale")
    if sd.timestamp > now + clock_skew:
        raise Rejected("future-dated")
