"""Independent reference computations used as test oracles. Nothing here
imports the package's signing, hashing or encoding helpers."""

from __future__ import annotations

import base64
import hashlib
import json
import math


def name_wire(text: str) -> bytes:
    out = b""
    for label in [l for l in text.strip(".").split(".") if l]:
        out += bytes([len(label)]) + label.lower().encode()
    return out + b"\x00"


def key_tag(rdata: bytes) -> int:
    """RFC 4034 Appendix B reference loop."""
    acc = 0
    for i, b in enumerate(rdata):
        acc += b if i & 1 else b << 8
    acc += (acc >> 16) & 0xFFFF
    return acc & 0xFFFF


def dnskey_rdata(flags: int, key: bytes) -> bytes:
    return flags.to_bytes(2, "big") + bytes([3, 15]) + key


def ds_sha256(owner: str, flags: int, key: bytes) -> bytes:
    return hashlib.sha256(name_wire(owner) + dnskey_rdata(flags, key)).digest()


def nsec3_label(owner: str) -> str:
    digest = hashlib.sha1(name_wire(owner)).digest()
    return base64.b32hexencode(digest).decode().lower()


def mth(leaves: list[bytes]) -> bytes:
    """Merkle tree hash exactly as the recursive definition reads."""
    n = len(leaves)
    if n == 0:
        return hashlib.sha256(b"").digest()
    if n == 1:
        return hashlib.sha256(b"\x00" + leaves[0]).digest()
    k = 1
    while k * 2 < n:
        k *= 2
    return hashlib.sha256(b"\x01" + mth(leaves[:k]) + mth(leaves[k:])).digest()


def b64u(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).decode().rstrip("=")


def key_authorization(token: str, ed25519_public: bytes) -> str:
    jwk = json.dumps({"crv": "Ed25519", "kty": "OKP", "x": b64u(ed25519_public)}, separators=(",", ":"), sort_keys=True)
    thumb = b64u(hashlib.sha256(jwk.encode()).digest())
    return b64u(hashlib.sha256(f"{token}.{thumb}".encode()).digest())


def fragment_count(payload_len: int, per_fragment: int) -> int:
    return math.ceil((payload_len + 4) / (14 * per_fragment))
