"""Server-side DNSSEC primitives: key tags, DS digests, NSEC3 hashing and
RRSIG generation (Ed25519, algorithm 15)."""

from __future__ import annotations

import base64
import hashlib
from typing import Sequence

from .dnswire import DNSKEY, DS, RRSIG, Name, ResourceRecord, RRType, canonical_rrset_bytes
from .keys import ALG_ED25519, SigningKey

KSK_FLAGS = 257
ZSK_FLAGS = 256
DIGEST_SHA256 = 2
NSEC3_SHA1 = 1

_B32_STD = "ABCDEFGHIJKLMNOPQRSTUVWXYZ234567"
_B32_HEX = "0123456789ABCDEFGHIJKLMNOPQRSTUV"
_TO_HEX = str.maketrans(_B32_STD, _B32_HEX)


def dnskey_for(public_key: bytes, ksk: bool) -> DNSKEY:
    return DNSKEY(KSK_FLAGS if ksk else ZSK_FLAGS, 3, ALG_ED25519, public_key)


def key_tag(dnskey: DNSKEY) -> int:
    data = dnskey.to_wire()
    acc = 0
    for i, octet in enumerate(data):
        acc += octet if i & 1 else octet << 8
    acc += (acc >> 16) & 0xFFFF
    return acc & 0xFFFF


def make_ds(owner: Name, dnskey: DNSKEY) -> DS:
    digest = hashlib.sha256(owner.to_wire(canonical=True) + dnskey.to_wire()).digest()
    return DS(key_tag(dnskey), dnskey.algorithm, DIGEST_SHA256, digest)


def nsec3_hash(name: Name, salt: bytes = b"", iterations: int = 0) -> bytes:
    h = hashlib.sha1(name.to_wire(canonical=True) + salt).digest()
    for _ in range(iterations):
        h = hashlib.sha1(h + salt).digest()
    return h


def b32hex(data: bytes) -> str:
    return base64.b32encode(data).decode().translate(_TO_HEX).rstrip("=").lower()


def sign_rrset(
    rrset: Sequence[ResourceRecord],
    key: SigningKey,
    tag: int,
    signer: Name,
    inception: int,
    expiration: int,
) -> ResourceRecord:
    first = rrset[0]
    ttl = first.ttl
    labels = len(first.owner.labels)
    if first.owner.labels and first.owner.labels[0] == b"*":
        labels -= 1
    template = RRSIG(first.rrtype, ALG_ED25519, labels, ttl, expiration, inception, tag, signer.lower(), b"")
    data = template.header_wire(canonical=True) + canonical_rrset_bytes(rrset, ttl)
    rrsig = RRSIG(**{**template.__dict__, "signature": key.sign(data)})
    return ResourceRecord(first.owner, RRType.RRSIG, ttl, rrsig)
