"""Shared test helpers: report factories and dnspython adapters."""

from __future__ import annotations

import dns.dnssec
import dns.name
import dns.rdata
import dns.rdataclass
import dns.rrset

from adns import attest
from adns.attest import AttestedKey, KeyUsage, Origin, ServiceConfig, SimPlatform
from adns.dnswire import RRType
from adns.keys import SigningKey
from adns.policy import ROLE_TABLE_POLICY, PolicyDocument
from adns.zone import ZoneConfig

T = 1_767_225_600
SGX = SimPlatform(attest.SIM_SGX, b"zone-tests")
SNP = SimPlatform(attest.SIM_SNP, b"zone-tests")
ANCHORS = (SGX.anchor, SNP.anchor)
ROLES = {
    "front-end": (attest.digest32(0xFEEDFACE), attest.digest32(0xDEADC0DE)),
    "back-end": (attest.digest32(0x8BADF00D), attest.digest32(0xBAADF00D)),
}
WWW = (Origin("www", "https", 443, 1),)


def leaf_config(origin: str = "service.conf", **kw) -> ZoneConfig:
    policies = {"registration": PolicyDocument("registration", origin, ROLE_TABLE_POLICY)}
    kw.setdefault("nameserver_addresses", ("10.0.2.1",))
    return ZoneConfig(origin, "leaf", policies, platform_anchors=ANCHORS, **kw)


def make_report(
    dane: SigningKey,
    prefix: str,
    role: str = "front-end",
    origins=WWW,
    time: int = T,
    platform: SimPlatform = SGX,
    zone: str = "service.conf",
    digests: tuple[bytes, bytes] | None = None,
    x509: SigningKey | None = None,
) -> bytes:
    measurement, hostdata = digests or ROLES[role]
    keys = [AttestedKey(KeyUsage.DANE, dane.public)]
    keys.append(AttestedKey(KeyUsage.X509, (x509 or dane).public))
    cfg = ServiceConfig(zone, "v0.1", prefix, role, tuple(origins))
    return attest.report_encode(platform.issue_report(measurement, hostdata, cfg, keys, time))


def key(i: int) -> SigningKey:
    return SigningKey(bytes([i]) * 32)


def to_dns_rrset(records) -> dns.rrset.RRset:
    records = list(records)
    first = records[0]
    rdatas = []
    for rr in records:
        wire = rr.rdata.to_wire(canonical=True)
        rdatas.append(dns.rdata.from_wire(dns.rdataclass.IN, int(rr.rrtype), wire, 0, len(wire)))
    return dns.rrset.from_rdata_list(dns.name.from_text(first.owner.to_text()), first.ttl, rdatas)


def dnspython_validates(records, sig, dnskeys, origin: str, now: int) -> bool:
    keys = {dns.name.from_text(origin): to_dns_rrset(dnskeys)}
    try:
        dns.dnssec.validate(to_dns_rrset(records), to_dns_rrset([sig]), keys, now=now)
    except dns.dnssec.ValidationFailure:
        return False
    return True


def split_answer(records):
    data = [rr for rr in records if rr.rrtype != RRType.RRSIG]
    sigs = [rr for rr in records if rr.rrtype == RRType.RRSIG]
    return data, sigs


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
