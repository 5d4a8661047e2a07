"""Deterministic binary encodings for certification requests and
certificates. These replace PKCS#10/X.509 DER behind a small codec."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .codec import DecodeError, Reader, Writer
from .keys import SigningKey, verify_signature

CSR_MAGIC = b"ADNSR\x01"
CERT_MAGIC = b"ADNSX\x01"


@dataclass(frozen=True)
class Csr:
    public_key: bytes
    names: tuple[str, ...]
    not_before: int
    not_after: int
    signature: bytes = b""

    def body(self) -> bytes:
        w = Writer().raw(CSR_MAGIC).blob(self.public_key).u16(len(self.names))
        for n in self.names:
            w.text(n)
        return w.u64(self.not_before).u64(self.not_after).getvalue()

    def to_bytes(self) -> bytes:
        return self.body() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> Csr:
        r = Reader(data)
        if r.raw(len(CSR_MAGIC)) != CSR_MAGIC:
            raise DecodeError("bad CSR magic")
        pub = r.blob()
        names = tuple(r.text() for _ in range(r.u16()))
        nb, na = r.u64(), r.u64()
        sig = r.raw(64)
        r.expect_end()
        return cls(pub, names, nb, na, sig)

    @classmethod
    def create(cls, key: SigningKey, names, not_before: int, not_after: int) -> Csr:
        csr = cls(key.public, tuple(str(n).rstrip(".").lower() for n in names), not_before, not_after)
        return replace(csr, signature=key.sign(csr.body()))

    def self_signature_ok(self) -> bool:
        return verify_signature(self.public_key, self.signature, self.body())


@dataclass(frozen=True)
class Certificate:
    serial: int
    issuer: str
    public_key: bytes
    names: tuple[str, ...]
    not_before: int
    not_after: int
    ct_index: int
    signature: bytes = b""

    def body(self) -> bytes:
        w = Writer().raw(CERT_MAGIC).u64(self.serial).text(self.issuer).blob(self.public_key)
        w.u16(len(self.names))
        for n in self.names:
            w.text(n)
        return w.u64(self.not_before).u64(self.not_after).u64(self.ct_index).getvalue()

    def to_bytes(self) -> bytes:
        return self.body() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> Certificate:
        r = Reader(data)
        if r.raw(len(CERT_MAGIC)) != CERT_MAGIC:
            raise DecodeError("bad certificate magic")
        serial, issuer, pub = r.u64(), r.text(), r.blob()
        names = tuple(r.text() for _ in range(r.u16()))
        nb, na, idx = r.u64(), r.u64(), r.u64()
        sig = r.raw(64)
        r.expect_end()
        return cls(serial, issuer, pub, names, nb, na, idx, sig)

    def verify(self, ca_public_key: bytes) -> bool:
        return verify_signature(ca_public_key, self.signature, self.body())

    def matches(self, csr: Csr) -> bool:
        return (
            self.public_key == csr.public_key
            and self.names == csr.names
            and (self.not_before, self.not_after) == (csr.not_before, csr.not_after)
        )
