"""Universal attestation reports, simulated TEE platforms and verification.

A report binds a platform, a code measurement, a configuration digest
(hostdata), the service configuration, a list of public keys and an
attestation time under a platform signature. Verification flattens a
report into a dict of scalar claims that policies can address.
"""

from __future__ import annotations

import enum
import hashlib
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .codec import DecodeError, Reader, Writer
from .dnswire import Name
from .keys import ALG_ED25519, SigningKey, verify_signature

REPORT_MAGIC = b"ADNSQ\x01"
CERT_MAGIC = b"ADNSC\x01"
DEFAULT_MAX_AGE = 600

SIM_SGX = "sim-sgx"
SIM_SNP = "sim-snp"


class AttestationError(Exception):
    code = "AttestationError"


class UnknownPlatform(AttestationError):
    code = "UnknownPlatform"


class BadSignature(AttestationError):
    code = "BadSignature"


class StaleReport(AttestationError):
    code = "StaleReport"


class SvnTooLow(AttestationError):
    code = "SvnTooLow"


class MalformedReport(AttestationError):
    code = "MalformedReport"


class TimeInversion(AttestationError):
    code = "TimeInversion"


class KeyUsage(enum.IntEnum):
    DANE = 0
    X509 = 1
    KSK = 2


@dataclass(frozen=True)
class AttestedKey:
    usage: KeyUsage
    public_key: bytes
    algorithm: int = ALG_ED25519


@dataclass(frozen=True)
class Origin:
    """An endpoint served by a TEE: ``prefix`` is relative to the service
    name (``@`` for the service name itself)."""

    prefix: str
    protocol: str
    port: int
    key_index: int

    def to_claim(self) -> str:
        return f"{self.prefix}:{self.protocol}:{self.port}:{self.key_index}"


@dataclass(frozen=True)
class ServiceConfig:
    service_name: str
    instance_id: str
    tee_prefix: str
    role: str
    origins: tuple[Origin, ...] = ()
    attributes: tuple[tuple[str, str], ...] = ()

    @property
    def service(self) -> Name:
        return Name.from_text(self.service_name)

    @property
    def tee_name(self) -> Name:
        if self.tee_prefix in ("", "@"):
            return self.service
        return Name.from_text(f"{self.tee_prefix}.{self.service_name}")

    def origin_name(self, origin: Origin) -> Name:
        if origin.prefix in ("", "@"):
            return self.service
        return Name.from_text(f"{origin.prefix}.{self.service_name}")

    def attribute(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.attributes:
            if k == key:
                return v
        return default

    def as_map(self) -> dict[str, object]:
        out: dict[str, object] = {
            "service_name": self.service.lower().to_text(),
            "instance_id": self.instance_id,
            "tee_prefix": self.tee_prefix,
            "role": self.role,
        }
        for k, v in self.attributes:
            out.setdefault(k, v)
        return out


@dataclass(frozen=True)
class PlatformTrustAnchor:
    platform: str
    root_public_key: bytes
    min_svn: int = 0


@dataclass(frozen=True)
class SimCertificate:
    subject: str
    issuer: str
    public_key: bytes
    svn: int
    extensions: bytes
    signature: bytes = b""

    def body(self) -> bytes:
        return (
            Writer()
            .raw(CERT_MAGIC)
            .text(self.subject)
            .text(self.issuer)
            .blob(self.public_key)
            .u16(self.svn)
            .blob(self.extensions)
            .getvalue()
        )

    def to_bytes(self) -> bytes:
        return self.body() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> SimCertificate:
        r = Reader(data)
        if r.raw(len(CERT_MAGIC)) != CERT_MAGIC:
            raise DecodeError("bad certificate magic")
        cert = cls(r.text(), r.text(), r.blob(), r.u16(), r.blob())
        sig = r.raw(64)
        r.expect_end()
        return SimCertificate(**{**cert.__dict__, "signature": sig})


@dataclass(frozen=True)
class AttestationReport:
    platform: str
    svn: int
    measurement: bytes
    hostdata: bytes
    config: ServiceConfig
    keys: tuple[AttestedKey, ...]
    time: int
    collaterals: tuple[tuple[str, bytes], ...] = ()
    signature: bytes = b""

    def body(self) -> bytes:
        w = Writer().raw(REPORT_MAGIC)
        w.text(self.platform).u16(self.svn).blob(self.measurement).blob(self.hostdata)
        c = self.config
        w.text(c.service_name).text(c.instance_id).text(c.tee_prefix).text(c.role)
        w.u16(len(c.origins))
        for o in c.origins:
            w.text(o.prefix).text(o.protocol).u16(o.port).u8(o.key_index)
        w.u16(len(c.attributes))
        for k, v in c.attributes:
            w.text(k).text(v)
        w.u8(len(self.keys))
        for key in self.keys:
            w.u8(key.algorithm).u8(int(key.usage)).blob(key.public_key)
        w.u64(self.time)
        w.u16(len(self.collaterals))
        for tag, data in self.collaterals:
            w.text(tag).blob(data)
        return w.getvalue()

    def to_bytes(self) -> bytes:
        return self.body() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> AttestationReport:
        try:
            r = Reader(data)
            if r.raw(len(REPORT_MAGIC)) != REPORT_MAGIC:
                raise DecodeError("bad report magic")
            platform, svn, measurement, hostdata = r.text(), r.u16(), r.blob(), r.blob()
            service_name, instance_id, tee_prefix, role = r.text(), r.text(), r.text(), r.text()
            origins = tuple(Origin(r.text(), r.text(), r.u16(), r.u8()) for _ in range(r.u16()))
            attributes = tuple((r.text(), r.text()) for _ in range(r.u16()))
            keys = []
            for _ in range(r.u8()):
                alg, usage, pub = r.u8(), r.u8(), r.blob()
                keys.append(AttestedKey(KeyUsage(usage), pub, alg))
            time = r.u64()
            collaterals = tuple((r.text(), r.blob()) for _ in range(r.u16()))
            signature = r.raw(64)
            r.expect_end()
        except (DecodeError, ValueError) as exc:
            raise MalformedReport(str(exc)) from None
        config = ServiceConfig(service_name, instance_id, tee_prefix, role, origins, attributes)
        return cls(platform, svn, measurement, hostdata, config, tuple(keys), time, collaterals, signature)

    @property
    def dane_key(self) -> bytes:
        return self.keys[0].public_key

    def keys_with_usage(self, usage: KeyUsage) -> list[bytes]:
        return [k.public_key for k in self.keys if k.usage == usage]

    def digest(self) -> str:
        return hashlib.sha256(report_encode(self)).hexdigest()


def report_encode(report: AttestationReport) -> bytes:
    """Raw-DEFLATE the deterministic binary encoding."""
    c = zlib.compressobj(9, zlib.DEFLATED, -15, 9)
    return c.compress(report.to_bytes()) + c.flush()


def report_decode(data: bytes) -> AttestationReport:
    d = zlib.decompressobj(-15)
    try:
        raw = d.decompress(bytes(data), 1 << 20)
    except zlib.error as exc:
        raise MalformedReport(f"inflate failed: {exc}") from None
    if d.unconsumed_tail or not d.eof or d.unused_data:
        raise MalformedReport("compressed report is truncated or has trailing data")
    return AttestationReport.from_bytes(raw)


# ---------------------------------------------------------------------------
# Simulated platforms
# ---------------------------------------------------------------------------

# Chain shapes per flavor: subjects of the certificates carried as collateral,
# from the one signed by the root down to the report-signing leaf.
_CHAINS = {
    SIM_SGX: ("Sim SGX Platform CA", "Sim SGX Processor CA", "Sim SGX PCK"),
    SIM_SNP: ("Sim SNP VCEK",),
}


def _tcb_extension(flavor: str, subject: str, svn: int) -> bytes:
    comps = ",".join(f'{{"svn":{svn},"category":"{flavor}","type":"component"}}' for _ in range(8))
    return f'{{"subject":"{subject}","tcbLevels":[{comps}],"status":"UpToDate"}}'.encode()


def _derive_seed(seed: bytes, *parts: str) -> bytes:
    h = hashlib.sha256(seed)
    for p in parts:
        h.update(b"\x00" + p.encode())
    return h.digest()


class SimPlatform:
    """A software stand-in for a TEE platform with a signing chain."""

    def __init__(self, flavor: str, seed: bytes = b"adns-sim", svn: int = 7):
        if flavor not in _CHAINS:
            raise ValueError(f"unknown sim flavor {flavor!r}")
        self.flavor = flavor
        self.svn = svn
        self._root = SigningKey(_derive_seed(seed, flavor, "root"))
        issuer_key, issuer_name = self._root, f"Sim {flavor} Root"
        chain = []
        for i, subject in enumerate(_CHAINS[flavor]):
            key = SigningKey(_derive_seed(seed, flavor, "chain", str(i)))
            cert = SimCertificate(subject, issuer_name, key.public, svn, _tcb_extension(flavor, subject, svn))
            cert = SimCertificate(**{**cert.__dict__, "signature": issuer_key.sign(cert.body())})
            chain.append(cert)
            issuer_key, issuer_name = key, subject
        self._leaf = issuer_key
        self.chain = tuple(chain)

    @property
    def anchor(self) -> PlatformTrustAnchor:
        return PlatformTrustAnchor(self.flavor, self._root.public, 0)

    def issue_report(
        self,
        measurement: bytes,
        hostdata: bytes,
        config: ServiceConfig,
        keys: Iterable[AttestedKey],
        time: int,
    ) -> AttestationReport:
        collaterals = tuple(("cert", c.to_bytes()) for c in self.chain)
        report = AttestationReport(
            self.flavor, self.svn, measurement, hostdata, config, tuple(keys), time, collaterals
        )
        return AttestationReport(**{**report.__dict__, "signature": self._leaf.sign(report.body())})


def sim_issue_report(
    platform: SimPlatform,
    measurement: bytes,
    hostdata: bytes,
    config: ServiceConfig,
    keys: Iterable[AttestedKey],
    time: int,
) -> AttestationReport:
    return platform.issue_report(measurement, hostdata, config, keys, time)


def digest32(value: int | bytes) -> bytes:
    """Zero-extend a small constant (e.g. 0xFEEDFACE) to a 32-octet digest."""
    if isinstance(value, int):
        return value.to_bytes(32, "big")
    if len(value) > 32:
        raise ValueError("digest longer than 32 octets")
    return bytes(32 - len(value)) + value


def hex_claim(data: bytes) -> str:
    return "0x" + data.hex()


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


def _check_structure(report: AttestationReport) -> None:
    if len(report.measurement) != 32 or len(report.hostdata) != 32:
        raise MalformedReport("measurement and hostdata must be 32 octets")
    if not report.keys:
        raise MalformedReport("report carries no keys")
    if report.keys[0].usage != KeyUsage.DANE:
        raise MalformedReport("first key must be the DANE key")
    for key in report.keys:
        if key.algorithm != ALG_ED25519 or len(key.public_key) != 32:
            raise MalformedReport("unsupported key algorithm")
    for origin in report.config.origins:
        if not 0 <= origin.key_index < len(report.keys):
            raise MalformedReport(f"origin {origin.prefix!r} references missing key {origin.key_index}")
    try:
        report.config.tee_name
        for origin in report.config.origins:
            report.config.origin_name(origin)
    except (ValueError, UnicodeEncodeError) as exc:
        raise MalformedReport(f"bad name in config: {exc}") from None


def _check_chain(report: AttestationReport, anchor: PlatformTrustAnchor) -> None:
    certs = []
    for tag, data in report.collaterals:
        if tag == "cert":
            try:
                certs.append(SimCertificate.from_bytes(data))
            except DecodeError as exc:
                raise MalformedReport(f"bad certificate collateral: {exc}") from None
    if not certs:
        raise MalformedReport("no platform certificates in collateral")
    signer = anchor.root_public_key
    for cert in certs:
        if not verify_signature(signer, cert.signature, cert.body()):
            raise BadSignature(f"certificate {cert.subject!r} does not verify")
        signer = cert.public_key
    if not verify_signature(signer, report.signature, report.body()):
        raise BadSignature("report signature does not verify")


def extract_claims(report: AttestationReport) -> dict[str, object]:
    config = report.config
    claims: dict[str, object] = {
        "platform": report.platform,
        "svn": report.svn,
        "measurement": hex_claim(report.measurement),
        "hostdata": hex_claim(report.hostdata),
        "report_time": report.time,
        "dane_key_digest": hex_claim(hashlib.sha256(report.dane_key).digest()),
        "x509_key_digests": [
            hex_claim(hashlib.sha256(k).digest()) for k in report.keys_with_usage(KeyUsage.X509)
        ],
        "service_name": config.service.lower().to_text(),
        "instance_id": config.instance_id,
        "tee_prefix": config.tee_prefix,
        "tee_name": config.tee_name.lower().to_text(),
        "role": config.role,
        "origins": [o.to_claim() for o in config.origins],
    }
    ksks = report.keys_with_usage(KeyUsage.KSK)
    if ksks:
        claims["ksk_digest"] = hex_claim(hashlib.sha256(ksks[0]).digest())
    return claims


def verify_report(
    report: AttestationReport,
    anchors: Iterable[PlatformTrustAnchor] | Mapping[str, PlatformTrustAnchor],
    now: int,
    max_age: int = DEFAULT_MAX_AGE,
) -> dict[str, object]:
    """Verify ``report`` and return its claims; raises on any failure."""
    if isinstance(anchors, Mapping):
        by_platform = dict(anchors)
    else:
        by_platform = {a.platform: a for a in anchors}
    if not by_platform:
        raise ValueError("no trust anchors supplied")
    _check_structure(report)
    anchor = by_platform.get(report.platform)
    if anchor is None:
        raise UnknownPlatform(report.platform)
    _check_chain(report, anchor)
    if report.svn < anchor.min_svn:
        raise SvnTooLow(f"svn {report.svn} below minimum {anchor.min_svn}")
    if now < report.time:
        raise TimeInversion(f"verification time {now} precedes report time {report.time}")
    if now - report.time > max_age:
        raise StaleReport(f"report is {now - report.time}s old (max {max_age}s)")
    return extract_claims(report)


def historical_verify(
    report: AttestationReport,
    anchors: Iterable[PlatformTrustAnchor] | Mapping[str, PlatformTrustAnchor],
    at_time: int,
    max_age: int = DEFAULT_MAX_AGE,
) -> dict[str, object]:
    """Verify as of ``at_time`` rather than the current time."""
    return verify_report(report, anchors, at_time, max_age)


def anchors_to_json(anchors: Iterable[PlatformTrustAnchor]) -> list[dict]:
    return [
        {"platform": a.platform, "root_public_key": a.root_public_key.hex(), "min_svn": a.min_svn}
        for a in anchors
    ]


def anchors_from_json(items: Iterable[Mapping]) -> tuple[PlatformTrustAnchor, ...]:
    return tuple(
        PlatformTrustAnchor(i["platform"], bytes.fromhex(i["root_public_key"]), int(i.get("min_svn", 0)))
        for i in items
    )
