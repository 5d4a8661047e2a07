"""The authoritative zone engine.

A zone is a deterministic function of its configuration and its ledger:
every mutation is validated, appended to the ledger, and then applied by
the same transition function that an auditor uses for replay. Served data
lives in immutable signed snapshots which are swapped atomically, so
lookups never observe a half-applied mutation.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import random
import struct
import threading
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import attest
from .attest import AttestationError, AttestationReport, KeyUsage, PlatformTrustAnchor
from .certs import Certificate
from .dnswire import (
    A,
    AAAA,
    ATTEST,
    CAA,
    DS,
    NS,
    NSEC3,
    NSEC3PARAM,
    RRSIG,
    SOA,
    TLSA,
    TXT,
    Name,
    RCode,
    Rdata,
    ResourceRecord,
    RRType,
    decode_rdata,
)
from .keys import SigningKey, spki_der, verify_signature
from .ledger import Ledger, LedgerEntry, OpKind, ReplayDivergence, canonical_json
from .policy import PolicyDocument, PolicyError, check_inheritance, eval_all
from .signer import b32hex, dnskey_for, key_tag, make_ds, nsec3_hash, sign_rrset

SIG_INCEPTION_SLACK = 300
SIG_VALIDITY = 172800
NEG_TTL = 300
ACME_TXT_TTL = 300
FRAG_DATA = 14
FRAG_LIMIT = 512
ACME_LABEL = b"_acme-challenge"
RESERVED_LABELS = (b"_policy", b"_attest")
UPDATE_PROOF_CONTEXT = b"adns-update"


class ZoneError(Exception):
    code = "ZoneError"


def _error(name: str) -> type[ZoneError]:
    return type(name, (ZoneError,), {"code": name})


NotLeafZone = _error("NotLeafZone")
NotIntermediateZone = _error("NotIntermediateZone")
NameOutsideZone = _error("NameOutsideZone")
PolicyRejected = _error("PolicyRejected")
DaneKeyMismatch = _error("DaneKeyMismatch")
NameClash = _error("NameClash")
UnknownRegistrant = _error("UnknownRegistrant")
AlreadyDelegated = _error("AlreadyDelegated")
InheritanceViolation = _error("InheritanceViolation")
BadReport = _error("BadReport")
ReservedLabelViolation = _error("ReservedLabelViolation")
OutOfZone = _error("OutOfZone")
FragmentMissing = _error("FragmentMissing")
SequenceGap = _error("SequenceGap")
NotConfigured = _error("NotConfigured")
UnknownDelegation = _error("UnknownDelegation")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZoneConfig:
    origin: str
    kind: str
    policies: Mapping[str, PolicyDocument]
    parent_mode: str = "adns"
    ca_directory: str = "https://ca.test/directory"
    ca_name: str = "letsencrypt.org"
    nameserver_count: int = 1
    nameserver_addresses: tuple[str, ...] = ()
    default_ttl: int = 3600
    attest_ttl: int = 300
    max_report_age: int = attest.DEFAULT_MAX_AGE
    platform_anchors: tuple[PlatformTrustAnchor, ...] = ()
    max_cert_lifetime: int = 90 * 86400
    registration_lifetime: int = 86400
    attested: bool = True

    def __post_init__(self):
        if self.kind not in ("leaf", "intermediate"):
            raise ValueError(f"zone kind must be leaf or intermediate, not {self.kind!r}")
        if self.parent_mode not in ("adns", "island-apex"):
            raise ValueError(f"unknown parent_mode {self.parent_mode!r}")
        if self.nameserver_count < 1:
            raise ValueError("at least one nameserver is required")

    @property
    def origin_name(self) -> Name:
        return Name.from_text(self.origin).lower()

    def policy(self, kind: str) -> PolicyDocument | None:
        return self.policies.get(kind)

    def to_json(self) -> dict:
        return {
            "origin": self.origin_name.to_text(),
            "kind": self.kind,
            "parent_mode": self.parent_mode,
            "policies": {k: v.to_json() for k, v in sorted(self.policies.items())},
            "ca_directory": self.ca_directory,
            "ca_name": self.ca_name,
            "nameserver_count": self.nameserver_count,
            "nameserver_addresses": list(self.nameserver_addresses),
            "default_ttl": self.default_ttl,
            "attest_ttl": self.attest_ttl,
            "max_report_age": self.max_report_age,
            "platform_anchors": attest.anchors_to_json(self.platform_anchors),
            "max_cert_lifetime": self.max_cert_lifetime,
            "registration_lifetime": self.registration_lifetime,
            "attested": self.attested,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> ZoneConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown zone config keys: {sorted(unknown)}")
        kw = dict(data)
        kw["policies"] = {k: PolicyDocument.from_json(v) for k, v in data.get("policies", {}).items()}
        kw["nameserver_addresses"] = tuple(data.get("nameserver_addresses", ()))
        kw["platform_anchors"] = attest.anchors_from_json(data.get("platform_anchors", ()))
        return cls(**kw)


def load_config(path: str) -> ZoneConfig:
    with open(path, encoding="utf-8") as fh:
        return ZoneConfig.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# Requests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegistrationRequest:
    report: bytes
    channel_key: bytes
    address: str
    key_proof: bytes = b""


@dataclass(frozen=True)
class DelegationRequest:
    report: bytes
    glue: tuple[tuple[str, str], ...]
    channel_key: bytes


def update_key_proof(new_dane_key: SigningKey, report: bytes) -> bytes:
    """Signature by the new DANE key authorizing a key rotation."""
    return new_dane_key.sign(UPDATE_PROOF_CONTEXT + hashlib.sha256(report).digest())


# ---------------------------------------------------------------------------
# Fragmented-AAAA encoding
# ---------------------------------------------------------------------------


def fragment_owner(name: Name, index: int) -> Name:
    return name.prepend(f"_{index}", "_attest")


def _rrsig_rr_length(signer: Name) -> int:
    # compressed owner + RR header + fixed RRSIG fields + signer + Ed25519 signature
    return 2 + 10 + 18 + signer.wire_length + 64


def records_per_fragment(name: Name, signer: Name, index_digits: int = 1) -> int:
    """Largest AAAA count whose signed response fits in 512 octets."""
    qname_len = name.wire_length + (2 + index_digits) + 8
    room = FRAG_LIMIT - 12 - (qname_len + 4) - _rrsig_rr_length(signer)
    return max(room // 28, 0)


def fragment_layout(name: Name, signer: Name, payload_len: int) -> tuple[int, int]:
    """Return (records_per_fragment, fragment_count) for a payload."""
    total = payload_len + 4
    digits = 1
    while True:
        rpf = records_per_fragment(name, signer, digits)
        if rpf < 1:
            raise ValueError(f"name {name} is too long to carry fragments")
        count = math.ceil(total / (FRAG_DATA * rpf))
        if len(str(count - 1)) <= digits:
            return rpf, count
        digits += 1


def encode_fragments(
    name: Name | str, payload: bytes, signer: Name | str | None = None, ttl: int = 300
) -> list[list[ResourceRecord]]:
    name = Name.from_text(name).lower()
    signer = name if signer is None else Name.from_text(signer).lower()
    rpf, count = fragment_layout(name, signer, len(payload))
    stream = struct.pack("!I", len(payload)) + payload
    stream += bytes(count * rpf * FRAG_DATA - len(stream))
    out = []
    for i in range(count):
        owner = fragment_owner(name, i)
        rrset = []
        for seq in range(rpf):
            start = (i * rpf + seq) * FRAG_DATA
            chunk = stream[start : start + FRAG_DATA]
            if i == count - 1 and start >= 4 + len(payload) and seq:
                break
            rrset.append(ResourceRecord(owner, RRType.AAAA, ttl, AAAA.from_bytes(struct.pack("!H", seq) + chunk)))
        out.append(rrset)
    return out


def _aaaa_bytes(item: object) -> bytes:
    if isinstance(item, ResourceRecord):
        item = item.rdata
    if isinstance(item, AAAA):
        return item.packed
    return bytes(item)  # type: ignore[arg-type]


def decode_fragments(rrsets: Mapping[int, Iterable] | Sequence[Iterable]) -> bytes:
    """Reassemble fragments (indexed by fragment number) into the payload."""
    by_index = dict(rrsets) if isinstance(rrsets, Mapping) else dict(enumerate(rrsets))
    if 0 not in by_index:
        raise FragmentMissing("fragment 0 is missing")
    stream = bytearray()
    expected = None
    i = 0
    while expected is None or len(stream) < expected:
        if i not in by_index:
            raise FragmentMissing(f"fragment {i} is missing")
        chunks = sorted((struct.unpack("!H", b[:2])[0], b[2:]) for b in map(_aaaa_bytes, by_index[i]))
        if not chunks:
            raise FragmentMissing(f"fragment {i} is empty")
        for want, (seq, _) in enumerate(chunks):
            if seq != want:
                raise SequenceGap(f"fragment {i} lacks sequence number {want}")
        for _, data in chunks:
            stream += data
        if expected is None and len(stream) >= 4:
            expected = 4 + struct.unpack("!I", bytes(stream[:4]))[0]
        i += 1
    return bytes(stream[4:expected])


def pack_attest_set(rdatas: Iterable[bytes]) -> bytes:
    """Frame several ATTEST rdatas into one fragment payload."""
    items = sorted(rdatas)
    return struct.pack("!H", len(items)) + b"".join(struct.pack("!I", len(d)) + d for d in items)


def unpack_attest_set(payload: bytes) -> list[bytes]:
    if len(payload) < 2:
        raise FragmentMissing("fragment payload too short")
    (n,) = struct.unpack("!H", payload[:2])
    pos, out = 2, []
    for _ in range(n):
        if pos + 4 > len(payload):
            raise FragmentMissing("fragment payload truncated")
        (size,) = struct.unpack("!I", payload[pos : pos + 4])
        out.append(payload[pos + 4 : pos + 4 + size])
        pos += 4 + size
    if pos != len(payload):
        raise FragmentMissing("fragment payload has trailing octets")
    return out


# ---------------------------------------------------------------------------
# Zone data: the state that replay reconstructs
# ---------------------------------------------------------------------------


@dataclass
class Registration:
    tee: Name
    report: AttestationReport
    encoded: bytes
    claims: dict
    address: str
    registered_at: int
    seq: int

    @property
    def role(self) -> str:
        return self.report.config.role

    @property
    def dane_key(self) -> bytes:
        return self.report.dane_key

    def origin_owners(self) -> list[tuple[Name, Name, bytes]]:
        """(origin name, service owner, pinned key) per configured origin."""
        cfg = self.report.config
        out = []
        for o in cfg.origins:
            n = cfg.origin_name(o).lower()
            out.append((n, n.prepend(f"_{o.port}", f"_{o.protocol}"), self.report.keys[o.key_index].public_key))
        return out


@dataclass
class Delegation:
    child: Name
    ksk: bytes
    glue: tuple[tuple[str, str], ...]
    report: AttestationReport | None
    encoded: bytes | None
    claims: dict | None
    seq: int

    @property
    def dane_key(self) -> bytes | None:
        return self.report.dane_key if self.report else None


@dataclass
class ZoneData:
    config: ZoneConfig
    ksk: bytes
    zsks: list[list] = field(default_factory=list)  # [public, retire_after or None]
    endorsement: bytes | None = None
    serial: int = 0
    last_time: int = 0
    registrations: dict[Name, Registration] = field(default_factory=dict)
    delegations: dict[Name, Delegation] = field(default_factory=dict)
    challenges: dict[Name, str] = field(default_factory=dict)
    certificates: dict[Name, list[Certificate]] = field(default_factory=dict)

    @property
    def origin(self) -> Name:
        return self.config.origin_name

    @property
    def current_zsk(self) -> bytes:
        return self.zsks[-1][0]

    def cut_for(self, name: Name) -> Name | None:
        for child in self.delegations:
            if name.is_subdomain_of(child):
                return child
        return None

    def registration_by_key(self, key: bytes) -> Registration | None:
        for reg in self.registrations.values():
            if reg.dane_key == key:
                return reg
        return None


def _anchors(config: ZoneConfig) -> dict[str, PlatformTrustAnchor]:
    return {a.platform: a for a in config.platform_anchors}


def _config_map(report: AttestationReport) -> dict:
    return report.config.as_map()


def _check_labels(name: Name, origin: Name) -> None:
    for label in name.relativize(origin):
        if label.lower() == ACME_LABEL:
            raise ReservedLabelViolation(f"{name} uses the reserved label _acme-challenge")
        if label.lower() in RESERVED_LABELS:
            raise NameClash(f"{name} uses a reserved label")


def _claimed_names(data: ZoneData) -> tuple[dict[tuple[Name, int], set], dict[Name, set]]:
    """Owners of every (name, type) and name, used for clash detection."""
    by_type: dict[tuple[Name, int], set] = defaultdict(set)
    by_name: dict[Name, set] = defaultdict(set)

    def claim(name: Name, rrtype: int, tag: tuple) -> None:
        by_type[(name, rrtype)].add(tag)
        by_name[name].add(tag)

    origin = data.origin
    static = ("static",)
    for t in (RRType.SOA, RRType.NS, RRType.DNSKEY, RRType.NSEC3PARAM, RRType.CAA):
        claim(origin, t, static)
    claim(origin.prepend("_policy"), RRType.TXT, static)
    for i in range(data.config.nameserver_count):
        claim(origin.prepend(f"ns{i}"), RRType.A, static)
    for reg in data.registrations.values():
        for n, svc, _ in reg.origin_owners():
            tag = ("reg", reg.tee, reg.role)
            claim(n, RRType.A, tag)
            claim(svc, RRType.TLSA, tag)
            claim(svc, RRType.ATTEST, tag)
        claim(reg.tee, RRType.TLSA, ("tee", reg.tee))
    return by_type, by_name


def check_registration_names(data: ZoneData, report: AttestationReport, ignore: Name | None = None) -> None:
    """Raise NameClash/ReservedLabelViolation if the report's names collide."""
    origin = data.origin
    cfg = report.config
    tee = cfg.tee_name.lower()
    by_type, by_name = _claimed_names(data)

    def foreign(tags: set) -> set:
        return {t for t in tags if not (len(t) > 1 and t[1] == ignore)}

    wanted: list[tuple[Name, int, bool]] = [(tee, RRType.TLSA, True)]
    for o in cfg.origins:
        n = cfg.origin_name(o).lower()
        svc = n.prepend(f"_{o.port}", f"_{o.protocol}")
        wanted += [(n, RRType.A, False), (svc, RRType.TLSA, False), (svc, RRType.ATTEST, False)]
    seen_shared = {n for n, _, excl in wanted if not excl}
    if tee == origin or tee in seen_shared:
        raise NameClash(f"TEE name {tee} collides with an origin or the apex")
    for name, rrtype, exclusive in wanted:
        if not name.is_subdomain_of(origin):
            raise NameOutsideZone(f"{name} is outside {origin}")
        _check_labels(name, origin)
        if data.cut_for(name) is not None:
            raise NameClash(f"{name} lies at or below a delegation")
        if exclusive:
            if foreign(by_name.get(name, set())):
                raise NameClash(f"{name} already exists")
            continue
        for tag in foreign(by_name.get(name, set())):
            if tag[0] == "static" and (name, rrtype) in by_type:
                raise NameClash(f"{name} {RRType.label(rrtype)} is reserved by the zone")
            if tag[0] == "tee":
                raise NameClash(f"{name} is a TEE name")
            if tag[0] == "reg" and tag[2] != cfg.role:
                raise NameClash(f"{name} is held by a TEE with role {tag[2]!r}")


def _verify_registration(data: ZoneData, report: AttestationReport, at: int) -> dict:
    cfg = data.config
    if cfg.kind != "leaf":
        raise NotLeafZone(f"{data.origin} is an intermediate zone")
    if report.config.service.lower() != data.origin:
        raise NameOutsideZone(f"service name {report.config.service_name} is not {data.origin}")
    claims = attest.verify_report(report, _anchors(cfg), at, cfg.max_report_age)
    doc = cfg.policy("registration")
    if doc is None:
        raise PolicyRejected("zone has no registration policy")
    try:
        ok = eval_all(doc, claims, _config_map(report))
    except PolicyError as exc:
        raise PolicyRejected(f"{type(exc).__name__}: {exc}") from None
    if not ok:
        raise PolicyRejected("registration policy rejected the claims")
    return claims


def _child_policy(report: AttestationReport, kind: str) -> PolicyDocument | None:
    raw = report.config.attribute(f"policy.{kind}")
    if raw is None:
        return None
    try:
        return PolicyDocument.from_json(json.loads(raw))
    except (ValueError, KeyError, TypeError) as exc:
        raise BadReport(f"unreadable {kind} policy in report: {exc}") from None


def _verify_delegation(data: ZoneData, report: AttestationReport, at: int) -> dict:
    cfg = data.config
    if cfg.kind != "intermediate":
        raise NotIntermediateZone(f"{data.origin} is a leaf zone")
    try:
        claims = attest.verify_report(report, _anchors(cfg), at, cfg.max_report_age)
    except AttestationError as exc:
        raise BadReport(f"{exc.code}: {exc}") from None
    if not report.keys_with_usage(KeyUsage.KSK):
        raise BadReport("child report attests no KSK")
    parent_doc = cfg.policy("delegation")
    if parent_doc is None:
        raise PolicyRejected("zone has no delegation policy")
    try:
        ok = eval_all(parent_doc, claims, _config_map(report))
    except PolicyError as exc:
        raise PolicyRejected(f"{type(exc).__name__}: {exc}") from None
    if not ok:
        raise PolicyRejected("delegation policy rejected the child")
    child_doc = _child_policy(report, "delegation")
    if child_doc is None or not check_inheritance(child_doc, parent_doc):
        raise InheritanceViolation("child delegation policy does not inherit the parent chain")
    if Name.from_text(child_doc.zone).lower() != report.config.service.lower():
        raise InheritanceViolation("child policy document names a different zone")
    return claims


def _check_child_name(data: ZoneData, child: Name, replacing: bool = False) -> None:
    origin = data.origin
    if child == origin or not child.is_subdomain_of(origin):
        raise NameOutsideZone(f"{child} is not below {origin}")
    cut = data.cut_for(child)
    if cut is not None and not (replacing and cut == child):
        raise AlreadyDelegated(f"{child} is already delegated (at {cut})")
    if not replacing:
        for other in data.delegations:
            if other.is_subdomain_of(child):
                raise AlreadyDelegated(f"{other} is already delegated below {child}")
    _check_labels(child, origin)
    _, by_name = _claimed_names(data)
    for name in by_name:
        if name.is_subdomain_of(child):
            raise NameClash(f"{name} already exists below {child}")


# ---------------------------------------------------------------------------
# The transition function
# ---------------------------------------------------------------------------


def _report_from_hex(value: str) -> tuple[AttestationReport, bytes]:
    raw = bytes.fromhex(value)
    return attest.report_decode(raw), raw


def new_zone_data(entry: LedgerEntry, config: ZoneConfig | None = None) -> ZoneData:
    if entry.op_kind != OpKind.Configure:
        raise ReplayDivergence("the first ledger entry must be Configure")
    body = entry.body()
    cfg = config or ZoneConfig.from_json(body["config"])
    endorsement = bytes.fromhex(body["report"]) if body.get("report") else None
    data = ZoneData(cfg, bytes.fromhex(body["ksk"]), [[bytes.fromhex(body["zsk"]), None]], endorsement)
    data.serial = entry.seq
    data.last_time = entry.ledger_time
    return data


def apply_entry(data: ZoneData, entry: LedgerEntry) -> None:
    """Apply one ledger entry to ``data``; raises ReplayDivergence on any
    entry the live zone could not have accepted."""
    body = entry.body()
    t = entry.ledger_time
    op = entry.op_kind
    try:
        if op == OpKind.Configure:
            raise ReplayDivergence("Configure may only appear first")
        if op in (OpKind.RegisterService, OpKind.UpdateRegistration):
            report, raw = _report_from_hex(body["report"])
            ignore = None
            if op == OpKind.UpdateRegistration:
                old = data.registration_by_key(bytes.fromhex(body["channel_key"]))
                if old is None:
                    raise UnknownRegistrant("no registration for the presented key")
                ignore = old.tee
            claims = _verify_registration(data, report, t)
            check_registration_names(data, report, ignore)
            if ignore is not None:
                data.registrations.pop(ignore, None)
                data.certificates.pop(ignore, None)
            tee = report.config.tee_name.lower()
            data.registrations[tee] = Registration(tee, report, raw, claims, body["address"], t, entry.seq)
        elif op in (OpKind.RegisterDelegation, OpKind.UpdateDelegation):
            child = Name.from_text(body["child"]).lower()
            glue = tuple((n, a) for n, a in body["glue"])
            if body.get("plain"):
                if data.config.attested:
                    raise BadReport("attested zones only delegate to attested children")
                _check_child_name(data, child, replacing=op == OpKind.UpdateDelegation)
                data.delegations[child] = Delegation(child, bytes.fromhex(body["ksk"]), glue, None, None, None, entry.seq)
            else:
                report, raw = _report_from_hex(body["report"])
                if report.config.service.lower() != child:
                    raise NameOutsideZone("child report names a different zone")
                if op == OpKind.UpdateDelegation:
                    old = data.delegations.get(child)
                    if old is None or old.dane_key != bytes.fromhex(body["channel_key"]):
                        raise UnknownDelegation(f"no delegation of {child} for the presented key")
                _check_child_name(data, child, replacing=op == OpKind.UpdateDelegation)
                claims = _verify_delegation(data, report, t)
                ksk = report.keys_with_usage(KeyUsage.KSK)[0]
                data.delegations[child] = Delegation(child, ksk, glue, report, raw, claims, entry.seq)
        elif op == OpKind.AcmeOrder:
            if body["action"] == "set":
                for name, value in body["challenges"].items():
                    n = Name.from_text(name).lower()
                    if n.first_label().lower() != ACME_LABEL or not n.is_subdomain_of(data.origin):
                        raise ReservedLabelViolation(f"{n} is not an ACME challenge name")
                    data.challenges[n] = value
            elif body["action"] == "clear":
                for name in body["names"]:
                    data.challenges.pop(Name.from_text(name).lower(), None)
            else:
                raise ReplayDivergence(f"unknown ACME action {body['action']!r}")
        elif op == OpKind.CertificateLogged:
            tee = Name.from_text(body["tee"]).lower()
            if tee not in data.registrations:
                raise UnknownRegistrant(f"no registration {tee}")
            cert = Certificate.from_bytes(bytes.fromhex(body["certificate"]))
            data.certificates.setdefault(tee, []).append(cert)
        elif op == OpKind.Resign:
            for item in data.zsks:
                if item[1] is None:
                    item[1] = data.last_time + SIG_VALIDITY
            data.zsks = [z for z in data.zsks if z[1] is None or z[1] > t]
            data.zsks.append([bytes.fromhex(body["zsk"]), None])
        else:
            raise ReplayDivergence(f"unsupported op {op.name}")
    except (ZoneError, AttestationError) as exc:
        raise ReplayDivergence(f"entry {entry.seq} ({op.name}) fails on replay: {exc.code}: {exc}") from None
    data.serial = entry.seq
    data.last_time = t


# ---------------------------------------------------------------------------
# Record construction
# ---------------------------------------------------------------------------

RRsetMap = dict[tuple[Name, int], list[ResourceRecord]]


def _address_rdata(address: str) -> Rdata:
    return AAAA(address) if ":" in address else A(address)


def _policy_text(cfg: ZoneConfig) -> str:
    doc = cfg.policy("registration" if cfg.kind == "leaf" else "delegation")
    return doc.own if doc is not None else "false"


def build_rrsets(data: ZoneData) -> RRsetMap:
    """All unsigned records implied by ``data`` (the replayable zone)."""
    cfg = data.config
    origin = data.origin
    out: RRsetMap = {}

    def add(name: Name, rdata: Rdata, ttl: int) -> None:
        name = name.lower()
        rrset = out.setdefault((name, rdata.rrtype), [])
        if all(rr.rdata != rdata for rr in rrset):
            rrset.append(ResourceRecord(name, rdata.rrtype, ttl, rdata))

    ttl = cfg.default_ttl
    ns_names = [origin.prepend(f"ns{i}") for i in range(cfg.nameserver_count)]
    add(origin, SOA(ns_names[0], origin.prepend("hostmaster"), data.serial, 3600, 600, 86400, NEG_TTL), ttl)
    for i, ns in enumerate(ns_names):
        add(origin, NS(ns), ttl)
        if i < len(cfg.nameserver_addresses):
            add(ns, _address_rdata(cfg.nameserver_addresses[i]), ttl)
    add(origin, dnskey_for(data.ksk, True), ttl)
    for pub, _ in data.zsks:
        add(origin, dnskey_for(pub, False), ttl)
    add(origin, NSEC3PARAM(1, 0, 0, b""), ttl)
    add(origin, CAA(0, "issue", f"{cfg.ca_name};validationmethods=dns-01".encode()), ttl)
    add(origin.prepend("_policy"), TXT.from_text_chunks(_policy_text(cfg)), ttl)

    at = cfg.attest_ttl
    for tee in sorted(data.registrations):
        reg = data.registrations[tee]
        addr = _address_rdata(reg.address)
        add(tee, TLSA(3, 1, 0, spki_der(reg.dane_key)), at)
        add(tee, addr, at)
        for n, svc, key in reg.origin_owners():
            add(n, addr, at)
            add(svc, TLSA(3, 1, 0, spki_der(key)), at)
            add(svc, ATTEST(reg.encoded), at)
        for cert in data.certificates.get(tee, []):
            digest = hashlib.sha256(spki_der(cert.public_key)).digest()
            for n, svc, _ in reg.origin_owners():
                if n.to_text() in cert.names:
                    add(svc, TLSA(1, 1, 1, digest), at)

    for child in sorted(data.delegations):
        d = data.delegations[child]
        for ns_text, address in d.glue:
            ns = Name.from_text(ns_text).lower()
            add(child, NS(ns), ttl)
            if ns.is_subdomain_of(origin):
                add(ns, _address_rdata(address), ttl)
        add(child, make_ds(child, dnskey_for(d.ksk, True)), ttl)
        if d.encoded is not None:
            add(child, ATTEST(d.encoded), at)

    for name in sorted(data.challenges):
        add(name, TXT.from_text_chunks(data.challenges[name]), ACME_TXT_TTL)

    for (owner, rrtype), rrset in list(out.items()):
        if rrtype != RRType.ATTEST or owner in data.delegations:
            continue
        payload = pack_attest_set(rr.rdata.data for rr in rrset)
        for frag in encode_fragments(owner, payload, origin, at):
            out[(frag[0].owner, RRType.AAAA)] = frag
    return out


def records_digest(rrsets: RRsetMap | Iterable[ResourceRecord]) -> str:
    """SHA-256 over the canonical form of all non-DNSSEC-proof records."""
    if isinstance(rrsets, Mapping):
        records = [rr for rrset in rrsets.values() for rr in rrset]
    else:
        records = list(rrsets)
    lines = set()
    for rr in records:
        if rr.rrtype in (RRType.RRSIG, RRType.NSEC3):
            continue
        rdata = rr.rdata.to_wire(canonical=True)
        lines.add(
            rr.owner.to_wire(canonical=True)
            + struct.pack("!HHIH", rr.rrtype, rr.rclass, rr.ttl, len(rdata))
            + rdata
        )
    h = hashlib.sha256()
    for line in sorted(lines):
        h.update(struct.pack("!I", len(line)) + line)
    return h.hexdigest()


def replay_state(entries: Sequence[LedgerEntry], config: ZoneConfig | None = None) -> ZoneData:
    if not entries:
        raise ReplayDivergence("empty ledger")
    data = new_zone_data(entries[0], config)
    for entry in entries[1:]:
        apply_entry(data, entry)
    return data


def replay_records(entries: Sequence[LedgerEntry], config: ZoneConfig | None = None) -> RRsetMap:
    return build_rrsets(replay_state(entries, config))


# ---------------------------------------------------------------------------
# Signed snapshots and lookup
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LookupResult:
    rcode: int
    aa: bool
    answers: tuple[ResourceRecord, ...] = ()
    authority: tuple[ResourceRecord, ...] = ()
    additional: tuple[ResourceRecord, ...] = ()


class ZoneSnapshot:
    """An immutable, fully signed view of the zone at one serial."""

    def __init__(
        self,
        origin: Name,
        rrsets: RRsetMap,
        cuts: Iterable[Name],
        ksk: SigningKey,
        zsk: SigningKey,
        now: int,
    ):
        self.origin = origin
        self.cuts = frozenset(cuts)
        self.rrsets = {k: tuple(v) for k, v in rrsets.items()}
        self.inception = now - SIG_INCEPTION_SLACK
        self.expiration = now + SIG_VALIDITY
        ksk_tag = key_tag(dnskey_for(ksk.public, True))
        zsk_tag = key_tag(dnskey_for(zsk.public, False))

        names: set[Name] = set()
        types: dict[Name, set[int]] = defaultdict(set)
        for owner, rrtype in self.rrsets:
            cut = self._cut(owner)
            if cut is not None and owner != cut:
                continue  # glue
            types[owner].add(rrtype)
            n = owner
            while n != origin:
                names.add(n)
                n = n.parent()
            names.add(origin)
        self.names = frozenset(names)

        sigs: dict[tuple[Name, int], tuple[ResourceRecord, ...]] = {}
        for (owner, rrtype), rrset in self.rrsets.items():
            if not self._signed(owner, rrtype):
                continue
            if rrtype == RRType.DNSKEY:
                sig = sign_rrset(rrset, ksk, ksk_tag, origin, self.inception, self.expiration)
            else:
                sig = sign_rrset(rrset, zsk, zsk_tag, origin, self.inception, self.expiration)
            sigs[(owner, rrtype)] = (sig,)
            types[owner].add(RRType.RRSIG)

        chain = sorted((nsec3_hash(n), n) for n in names)
        hashes = [h for h, _ in chain]
        nsec3: list[tuple[ResourceRecord, ResourceRecord]] = []
        for i, (h, n) in enumerate(chain):
            owner = origin.prepend(b32hex(h))
            nxt = hashes[(i + 1) % len(hashes)]
            rr = ResourceRecord(owner, RRType.NSEC3, NEG_TTL, NSEC3(1, 0, 0, b"", nxt, tuple(sorted(types[n]))))
            nsec3.append((rr, sign_rrset([rr], zsk, zsk_tag, origin, self.inception, self.expiration)))
        self.sigs = sigs
        self._hashes = hashes
        self._nsec3 = nsec3

    def _cut(self, name: Name) -> Name | None:
        for cut in self.cuts:
            if name.is_subdomain_of(cut):
                return cut
        return None

    def _signed(self, owner: Name, rrtype: int) -> bool:
        cut = self._cut(owner)
        if cut is None:
            return True
        return owner == cut and rrtype in (RRType.DS, RRType.ATTEST)

    def rrset(self, name: Name | str, rrtype: int) -> tuple[ResourceRecord, ...]:
        return self.rrsets.get((Name.from_text(name).lower(), rrtype), ())

    def records(self) -> list[ResourceRecord]:
        """Every unsigned record held, sorted canonically."""
        return sorted(
            (rr for rrset in self.rrsets.values() for rr in rrset),
            key=lambda rr: (rr.owner, rr.rrtype, rr.rdata.to_wire(True)),
        )

    def digest(self) -> str:
        return records_digest(self.rrsets)

    def served_rrsets(self) -> list[tuple[Name, int]]:
        """(name, type) pairs answered authoritatively with signatures."""
        return sorted(k for k in self.rrsets if self._signed(*k))

    def nsec3_records(self) -> list[ResourceRecord]:
        return [rr for rr, _ in self._nsec3]

    def _with_sig(self, key: tuple[Name, int]) -> tuple[ResourceRecord, ...]:
        return self.rrsets[key] + self.sigs.get(key, ())

    def _nsec3_matching(self, name: Name) -> tuple[ResourceRecord, ...]:
        i = self._hashes.index(nsec3_hash(name))
        return self._nsec3[i]

    def _nsec3_covering(self, name: Name) -> tuple[ResourceRecord, ...]:
        i = bisect_right(self._hashes, nsec3_hash(name)) - 1
        return self._nsec3[i % len(self._nsec3)]

    def _soa(self) -> tuple[ResourceRecord, ...]:
        return self._with_sig((self.origin, RRType.SOA))

    def lookup(self, qname: Name | str, qtype: int) -> LookupResult:
        qname = Name.from_text(qname).lower()
        if not qname.is_subdomain_of(self.origin):
            raise OutOfZone(f"{qname} is not in {self.origin}")
        cut = self._cut(qname)
        if cut is not None and not (qname == cut and qtype in (RRType.DS, RRType.ATTEST)):
            return self._referral(cut)
        key = (qname, qtype)
        if key in self.rrsets:
            return LookupResult(RCode.NOERROR, True, self._with_sig(key))
        if qname in self.names:
            return LookupResult(RCode.NOERROR, True, (), self._soa() + self._nsec3_matching(qname))
        ce = qname.parent()
        while ce not in self.names:
            ce = ce.parent()
        next_closer = Name(qname.labels[len(qname.labels) - len(ce.labels) - 1 :])
        proof: list[ResourceRecord] = []
        for part in (
            self._nsec3_matching(ce),
            self._nsec3_covering(next_closer),
            self._nsec3_covering(ce.prepend("*")),
        ):
            for rr in part:
                if rr not in proof:
                    proof.append(rr)
        return LookupResult(RCode.NXDOMAIN, True, (), self._soa() + tuple(proof))

    def _referral(self, cut: Name) -> LookupResult:
        ns = self.rrsets.get((cut, RRType.NS), ())
        auth = ns + self._with_sig((cut, RRType.DS)) if (cut, RRType.DS) in self.rrsets else ns
        glue = []
        for rr in ns:
            for t in (RRType.A, RRType.AAAA):
                glue += self.rrsets.get((rr.rdata.target, t), ())
        return LookupResult(RCode.NOERROR, False, (), auth, tuple(glue))


# ---------------------------------------------------------------------------
# The live zone
# ---------------------------------------------------------------------------


def _snapshot_json(snapshot: ZoneSnapshot) -> list[dict]:
    return [
        {
            "owner": rr.owner.to_text(),
            "type": int(rr.rrtype),
            "ttl": rr.ttl,
            "rdata": rr.rdata.to_wire(canonical=True).hex(),
        }
        for rr in snapshot.records()
    ]


def records_from_json(items: Iterable[Mapping]) -> list[ResourceRecord]:
    out = []
    for item in items:
        rrtype = int(item["type"])
        out.append(
            ResourceRecord(
                Name.from_text(item["owner"]), rrtype, int(item["ttl"]), decode_rdata(rrtype, bytes.fromhex(item["rdata"]))
            )
        )
    return out


class Zone:
    """One authoritative zone with its keys, ledger and current snapshot."""

    def __init__(
        self,
        config: ZoneConfig,
        rng: random.Random,
        ledger: Ledger,
        ksk: SigningKey | None = None,
        endorsement: bytes | None = None,
    ):
        self.config = config
        self.rng = rng
        self.ledger = ledger
        self.ksk = ksk or SigningKey.generate(rng)
        self.endorsement = endorsement
        self._zsk_keys: dict[bytes, SigningKey] = {}
        self._lock = threading.RLock()
        self.data: ZoneData | None = None
        self.snapshot: ZoneSnapshot | None = None
        self._overrides: dict[tuple[Name, int], list[ResourceRecord]] = {}

    @property
    def origin(self) -> Name:
        return self.config.origin_name

    def _new_zsk(self) -> SigningKey:
        key = SigningKey.generate(self.rng)
        self._zsk_keys[key.public] = key
        return key

    def _require(self) -> ZoneData:
        if self.data is None:
            raise NotConfigured(f"zone {self.origin} is not initialized")
        return self.data

    def _commit(self, op: OpKind, payload: dict, at: int) -> LedgerEntry:
        """Dry-run on a scratch copy so the ledger never holds an entry that
        replay would reject, then log and apply for real."""
        data = self._require()
        scratch = copy.deepcopy(data)
        apply_entry(scratch, LedgerEntry(len(self.ledger), at, op, canonical_json(payload)))
        entry = self.ledger.record(op, payload, at)
        apply_entry(data, entry)
        self._publish(entry.ledger_time)
        return entry

    def _publish(self, now: int) -> None:
        data = self._require()
        rrsets = build_rrsets(data)
        for key, rrset in self._overrides.items():
            rrsets[key] = rrset
        zsk = self._zsk_keys[data.current_zsk]
        self.snapshot = ZoneSnapshot(self.origin, rrsets, data.delegations, self.ksk, zsk, now)

    def init(self, now: int) -> LedgerEntry:
        with self._lock:
            if self.data is not None:
                raise ZoneError("zone already initialized")
            zsk = self._new_zsk()
            payload = {
                "config": self.config.to_json(),
                "ksk": self.ksk.public.hex(),
                "zsk": zsk.public.hex(),
                "report": self.endorsement.hex() if self.endorsement else None,
            }
            entry = self.ledger.record(OpKind.Configure, payload, now)
            self.data = new_zone_data(entry, self.config)
            self._publish(entry.ledger_time)
            return entry

    @property
    def ksk_dnskey(self):
        return dnskey_for(self.ksk.public, True)

    def ds(self):
        return make_ds(self.origin, self.ksk_dnskey)

    def digest(self) -> str:
        with self._lock:
            return build_rrsets_digest(self._require())

    def served_digest(self) -> str:
        return self.snapshot.digest()

    def snapshot_json(self) -> list[dict]:
        return _snapshot_json(self.snapshot)

    # -- registrations ---------------------------------------------------

    def _decode(self, raw: bytes, err: type[Exception]) -> AttestationReport:
        try:
            return attest.report_decode(raw)
        except AttestationError as exc:
            raise err(f"undecodable report: {exc}") from None

    def register_service(self, req: RegistrationRequest, now: int) -> LedgerEntry:
        with self._lock:
            data = self._require()
            at = self.ledger.ledger_time(now)
            report = self._decode(req.report, BadReport)
            _verify_registration(data, report, at)
            if report.dane_key != req.channel_key:
                raise DaneKeyMismatch("keys[0] differs from the channel key")
            check_registration_names(data, report)
            payload = {"report": req.report.hex(), "address": req.address, "channel_key": req.channel_key.hex()}
            return self._commit(OpKind.RegisterService, payload, at)

    def update_registration(self, req: RegistrationRequest, now: int) -> LedgerEntry:
        with self._lock:
            data = self._require()
            at = self.ledger.ledger_time(now)
            old = data.registration_by_key(req.channel_key)
            if old is None:
                raise UnknownRegistrant("no registration holds the presented key")
            report = self._decode(req.report, BadReport)
            _verify_registration(data, report, at)
            if report.dane_key != req.channel_key and not verify_signature(
                report.dane_key, req.key_proof, UPDATE_PROOF_CONTEXT + hashlib.sha256(req.report).digest()
            ):
                raise DaneKeyMismatch("new DANE key is not proven by the update")
            check_registration_names(data, report, ignore=old.tee)
            payload = {"report": req.report.hex(), "address": req.address, "channel_key": req.channel_key.hex()}
            return self._commit(OpKind.UpdateRegistration, payload, at)

    # -- delegations -----------------------------------------------------

    def register_delegation(self, req: DelegationRequest, now: int, update: bool = False) -> LedgerEntry:
        with self._lock:
            data = self._require()
            at = self.ledger.ledger_time(now)
            if data.config.kind != "intermediate":
                raise NotIntermediateZone(f"{data.origin} is a leaf zone")
            report = self._decode(req.report, BadReport)
            child = report.config.service.lower()
            if update:
                old = data.delegations.get(child)
                if old is None or old.dane_key != req.channel_key:
                    raise UnknownDelegation(f"no delegation of {child} for the presented key")
            _check_child_name(data, child, replacing=update)
            _verify_delegation(data, report, at)
            if report.dane_key != req.channel_key and not update:
                raise DaneKeyMismatch("keys[0] differs from the channel key")
            payload = {
                "child": child.to_text(),
                "report": req.report.hex(),
                "glue": [[n, a] for n, a in req.glue],
                "channel_key": req.channel_key.hex(),
            }
            op = OpKind.UpdateDelegation if update else OpKind.RegisterDelegation
            return self._commit(op, payload, at)

    def update_delegation(self, req: DelegationRequest, now: int) -> LedgerEntry:
        return self.register_delegation(req, now, update=True)

    def add_plain_delegation(self, child: Name | str, ksk_public: bytes, glue, now: int) -> LedgerEntry:
        """Operator-driven delegation without attestation (non-aDNS zones only)."""
        with self._lock:
            data = self._require()
            at = self.ledger.ledger_time(now)
            if data.config.attested:
                raise BadReport("attested zones only delegate to attested children")
            child = Name.from_text(child).lower()
            _check_child_name(data, child)
            payload = {"child": child.to_text(), "plain": True, "ksk": ksk_public.hex(), "glue": [[n, a] for n, a in glue]}
            return self._commit(OpKind.RegisterDelegation, payload, at)

    # -- ACME support ----------------------------------------------------

    def set_acme_txt(self, values: Mapping[Name | str, str], now: int) -> LedgerEntry:
        with self._lock:
            data = self._require()
            challenges = {}
            for name, value in values.items():
                n = Name.from_text(name).lower()
                if n.first_label().lower() != ACME_LABEL or not n.is_subdomain_of(data.origin):
                    raise ReservedLabelViolation(f"{n} is not an ACME challenge name in {data.origin}")
                challenges[n.to_text()] = value
            at = self.ledger.ledger_time(now)
            return self._commit(OpKind.AcmeOrder, {"action": "set", "challenges": challenges}, at)

    def clear_acme_txt(self, names: Iterable[Name | str], now: int) -> LedgerEntry:
        with self._lock:
            at = self.ledger.ledger_time(now)
            payload = {"action": "clear", "names": sorted(Name.from_text(n).lower().to_text() for n in names)}
            return self._commit(OpKind.AcmeOrder, payload, at)

    def install_certificate(self, tee: Name, cert: Certificate, now: int) -> LedgerEntry:
        with self._lock:
            at = self.ledger.ledger_time(now)
            payload = {"tee": tee.to_text(), "certificate": cert.to_bytes().hex(), "names": list(cert.names)}
            return self._commit(OpKind.CertificateLogged, payload, at)

    # -- maintenance -----------------------------------------------------

    def resign(self, now: int) -> LedgerEntry:
        with self._lock:
            self._require()
            zsk = self._new_zsk()
            at = self.ledger.ledger_time(now)
            entry = self._commit(OpKind.Resign, {"zsk": zsk.public.hex()}, at)
            live = {pub for pub, _ in self.data.zsks}
            self._zsk_keys = {k: v for k, v in self._zsk_keys.items() if k in live}
            return entry

    def operator_override(self, name: Name | str, rrtype: int, rdatas: Sequence[Rdata], ttl: int, now: int) -> None:
        """Rogue-host hook: replace served records with no ledger entry."""
        with self._lock:
            n = Name.from_text(name).lower()
            self._overrides[(n, rrtype)] = [ResourceRecord(n, rrtype, ttl, r) for r in rdatas]
            self._publish(now)

    def clear_overrides(self, now: int) -> None:
        with self._lock:
            self._overrides.clear()
            self._publish(now)

    def lookup(self, qname: Name | str, qtype: int) -> LookupResult:
        snap = self.snapshot
        if snap is None:
            raise NotConfigured(f"zone {self.origin} is not initialized")
        return snap.lookup(qname, qtype)


def build_rrsets_digest(data: ZoneData) -> str:
    return records_digest(build_rrsets(data))


def init_zone(
    config: ZoneConfig,
    now: int,
    rng: random.Random,
    ledger: Ledger | None = None,
    ksk: SigningKey | None = None,
    endorsement: bytes | None = None,
) -> Zone:
    if ledger is None:
        ledger = Ledger(SigningKey.generate(rng))
    zone = Zone(config, rng, ledger, ksk, endorsement)
    zone.init(now)
    return zone
