"""The client-side verifier.

DNSSEC validation here is written independently of the server's signer:
key tags, DS digests, NSEC3 hashes and the RRSIG signed-data layout are
recomputed locally and signatures are checked with ``cryptography``
directly. Only the message codec is shared.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import struct
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from . import attest
from .attest import AttestationError, AttestationReport, KeyUsage, PlatformTrustAnchor
from .dnswire import (
    DNSKEY,
    DS,
    NSEC3,
    RRSIG,
    SOA,
    DnsMessage,
    Flags,
    Name,
    Question,
    RCode,
    ResourceRecord,
    RRType,
    WireError,
    decode_message,
    encode_message,
)
from .keys import spki_der
from .policy import PolicyDocument, PolicyError, eval_policy


class VerifierError(Exception):
    code = "VerifierError"
    exit_code = 1


def _error(name: str, exit_code: int) -> type[VerifierError]:
    return type(name, (VerifierError,), {"code": name, "exit_code": exit_code})


BogusSignature = _error("BogusSignature", 3)
MissingChain = _error("MissingChain", 3)
ExpiredSignature = _error("ExpiredSignature", 3)
InceptionInFuture = _error("InceptionInFuture", 3)
BogusResponse = _error("BogusResponse", 3)
AttestationFailed = _error("AttestationFailed", 4)
BindingMismatch = _error("BindingMismatch", 4)
PolicyRejected = _error("PolicyRejected", 5)
NoLocalPolicy = _error("NoLocalPolicy", 5)
DiscoveryRefused = _error("DiscoveryRefused", 5)
Timeout = _error("Timeout", 6)
ServFail = _error("ServFail", 6)
NoSuchName = _error("NoSuchName", 6)
AuditDivergence = _error("AuditDivergence", 7)
KskMismatch = _error("KskMismatch", 8)
Expired = _error("Expired", 9)

ALG_ED25519 = 15
MAX_REFERRALS = 16
_CNAME = 5


class Transport(Protocol):
    def udp(self, address: str, data: bytes) -> bytes: ...

    def tcp(self, address: str, data: bytes) -> bytes: ...

    def rpc(self, address: str, method: str, path: str, body: Mapping | None, client_key=None) -> tuple[int, dict]: ...


# ---------------------------------------------------------------------------
# Independent DNSSEC primitives
# ---------------------------------------------------------------------------


def _name_wire(name: Name) -> bytes:
    out = b""
    for label in name.labels:
        out += bytes((len(label),)) + label.lower()
    return out + b"\x00"


def compute_key_tag(flags: int, protocol: int, algorithm: int, key: bytes) -> int:
    """RFC 4034 Appendix B checksum over the DNSKEY rdata."""
    rdata = struct.pack("!HBB", flags, protocol, algorithm) + key
    if len(rdata) % 2:
        rdata += b"\x00"
    total = sum(struct.unpack(f"!{len(rdata) // 2}H", rdata))
    total += total >> 16
    return total & 0xFFFF


def ds_digest(owner: Name, dnskey: DNSKEY) -> bytes:
    rdata = struct.pack("!HBB", dnskey.flags, dnskey.protocol, dnskey.algorithm) + dnskey.key
    return hashlib.sha256(_name_wire(owner) + rdata).digest()


def nsec3_label(name: Name, salt: bytes = b"", iterations: int = 0) -> str:
    digest = hashlib.sha1(_name_wire(name) + salt).digest()
    for _ in range(iterations):
        digest = hashlib.sha1(digest + salt).digest()
    return base64.b32hexencode(digest).decode().lower()


def _signed_data(sig: RRSIG, rrset: Sequence[ResourceRecord]) -> bytes:
    head = struct.pack(
        "!HBBIIIH",
        sig.type_covered,
        sig.algorithm,
        sig.labels,
        sig.original_ttl,
        sig.expiration,
        sig.inception,
        sig.key_tag,
    ) + _name_wire(sig.signer)
    owner = _name_wire(rrset[0].owner)
    body = []
    for rr in rrset:
        rd = rr.rdata.to_wire(canonical=True)
        body.append(owner + struct.pack("!HHIH", rr.rrtype, rr.rclass, sig.original_ttl, len(rd)) + rd)
    return head + b"".join(sorted(set(body), key=lambda b: b[len(owner) + 10 :]))


def _ed25519_ok(key: bytes, sig: bytes, data: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(key).verify(sig, data)
    except (InvalidSignature, ValueError):
        return False
    return True


def verify_rrsig(
    rrset: Sequence[ResourceRecord],
    sig_rr: ResourceRecord,
    keys: Iterable[DNSKEY],
    zone: Name,
    now: int,
) -> None:
    """Raise unless ``sig_rr`` is a valid signature over ``rrset`` by one
    of ``keys`` for ``zone`` at time ``now``."""
    sig = sig_rr.rdata
    if not isinstance(sig, RRSIG):
        raise BogusSignature("not an RRSIG")
    first = rrset[0]
    if sig.type_covered != first.rrtype or sig_rr.owner != first.owner:
        raise BogusSignature("RRSIG covers a different RRset")
    if sig.algorithm != ALG_ED25519:
        raise BogusSignature(f"unsupported algorithm {sig.algorithm}")
    if sig.signer != zone or sig.signer.labels != zone.lower().labels:
        raise BogusSignature(f"signer {sig.signer} is not {zone}")
    if sig.labels != len(first.owner.labels):
        raise BogusSignature("RRSIG label count mismatch")
    for rr in rrset:
        if rr.ttl != sig.original_ttl:
            raise BogusSignature("record TTL differs from the signed original TTL")
    if sig_rr.ttl != sig.original_ttl:
        raise BogusSignature("RRSIG TTL differs from the covered RRset")
    if now > sig.expiration:
        raise ExpiredSignature(f"signature expired at {sig.expiration}")
    if now < sig.inception:
        raise InceptionInFuture(f"signature not valid before {sig.inception}")
    data = _signed_data(sig, rrset)
    for key in keys:
        if key.algorithm != ALG_ED25519 or not key.flags & 0x0100 or key.protocol != 3:
            continue
        if compute_key_tag(key.flags, key.protocol, key.algorithm, key.key) != sig.key_tag:
            continue
        if _ed25519_ok(key.key, sig.signature, data):
            return
    raise BogusSignature(f"no key validates the {RRType.label(first.rrtype)} RRset at {first.owner}")


# ---------------------------------------------------------------------------
# Trust store and results
# ---------------------------------------------------------------------------


@dataclass
class TrustStore:
    root_ds: list[DS] = field(default_factory=list)
    pinned: dict[Name, bytes] = field(default_factory=dict)
    adns_policy: str | None = None
    local_policies: dict[Name, str] = field(default_factory=dict)
    platform_anchors: tuple[PlatformTrustAnchor, ...] = ()
    discovery: str = "off"
    max_report_age: int = 86400
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def pin(self, zone: Name | str, ksk: bytes) -> None:
        with self._lock:
            self.pinned[Name.from_text(zone).lower()] = ksk

    def to_json(self) -> dict:
        return {
            "root_ds": [
                {"key_tag": d.key_tag, "algorithm": d.algorithm, "digest_type": d.digest_type, "digest": d.digest.hex()}
                for d in self.root_ds
            ],
            "pinned": {k.to_text(): v.hex() for k, v in self.pinned.items()},
            "adns_policy": self.adns_policy,
            "local_policies": {k.to_text(): v for k, v in self.local_policies.items()},
            "platform_anchors": attest.anchors_to_json(self.platform_anchors),
            "discovery": self.discovery,
            "max_report_age": self.max_report_age,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> TrustStore:
        return cls(
            [DS(d["key_tag"], d["algorithm"], d["digest_type"], bytes.fromhex(d["digest"])) for d in data.get("root_ds", [])],
            {Name.from_text(k).lower(): bytes.fromhex(v) for k, v in data.get("pinned", {}).items()},
            data.get("adns_policy"),
            {Name.from_text(k).lower(): v for k, v in data.get("local_policies", {}).items()},
            attest.anchors_from_json(data.get("platform_anchors", [])),
            data.get("discovery", "off"),
            int(data.get("max_report_age", 86400)),
        )


@dataclass(frozen=True)
class Answer:
    """A validated response: ``records`` is empty for an authenticated denial."""

    name: Name
    rrtype: int
    zone: Name
    rcode: int
    records: tuple[ResourceRecord, ...]
    ttl: int

    def rdatas(self) -> list:
        return [rr.rdata for rr in self.records]


@dataclass(frozen=True)
class VerifiedService:
    name: Name
    port: int
    proto: str
    addresses: tuple[str, ...]
    expected_keys: tuple[bytes, ...]
    claims: tuple[dict, ...]
    policy: str
    policy_source: str
    report_digests: tuple[str, ...]
    valid_until: int

    def to_json(self) -> dict:
        return {
            "name": self.name.to_text(),
            "port": self.port,
            "proto": self.proto,
            "addresses": list(self.addresses),
            "expected_keys": [k.hex() for k in self.expected_keys],
            "claims": list(self.claims),
            "policy": self.policy,
            "policy_source": self.policy_source,
            "report_digests": list(self.report_digests),
            "valid_until": self.valid_until,
        }


@dataclass
class _ZoneInfo:
    apex: Name
    servers: tuple[str, ...]
    keys: tuple[DNSKEY, ...] | None  # None: not covered by any trust anchor


# ---------------------------------------------------------------------------
# Resolver
# ---------------------------------------------------------------------------


class Resolver:
    """Iterative, validating resolver over a message transport."""

    def __init__(
        self,
        transport: Transport,
        root_servers: Sequence[str],
        store: TrustStore,
        clock: Callable[[], int],
        seed: int = 0,
        udp_first: bool = True,
    ):
        self.transport = transport
        self.root_servers = tuple(root_servers)
        self.store = store
        self.clock = clock
        self.udp_first = udp_first
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self._zones: dict[Name, _ZoneInfo] = {}
        self.queries = 0

    # -- message exchange ------------------------------------------------

    def _next_id(self) -> int:
        with self._lock:
            self.queries += 1
            return self._rng.randrange(1 << 16)

    def exchange(self, server: str, name: Name, rrtype: int) -> DnsMessage:
        """One query with strict response checking (UDP, then TCP on TC)."""
        qid = self._next_id()
        query = DnsMessage(qid, Flags(), Question(name, rrtype))
        wire = encode_message(query)
        try:
            if self.udp_first:
                raw = self.transport.udp(server, wire)
                msg = self._check(raw, query, wire, allow_tc=True)
                if not msg.flags.tc:
                    return msg
            raw = self.transport.tcp(server, wire)
        except OSError as exc:
            raise Timeout(f"{server}: {exc}") from None
        return self._check(raw, query, wire, allow_tc=False)

    @staticmethod
    def _check(raw: bytes, query: DnsMessage, wire: bytes, allow_tc: bool) -> DnsMessage:
        try:
            msg = decode_message(raw)
        except WireError as exc:
            raise BogusResponse(f"undecodable response: {exc}") from None
        qlen = len(wire) - 12
        f = msg.flags
        if msg.id != query.id:
            raise BogusResponse("response id mismatch")
        if raw[12 : 12 + qlen] != wire[12:]:
            raise BogusResponse("response question differs from the query")
        if not f.qr or f.opcode or f.ra or f.z or f.ad or f.cd or f.rd != query.flags.rd:
            raise BogusResponse("unexpected response flags")
        if f.tc and not allow_tc:
            raise BogusResponse("truncated response over TCP")
        if f.rcode == RCode.SERVFAIL:
            raise ServFail("server failure")
        if f.rcode not in (RCode.NOERROR, RCode.NXDOMAIN):
            raise BogusResponse(f"unexpected rcode {f.rcode}")
        try:
            if encode_message(msg) != raw:
                raise BogusResponse("response is not in canonical server encoding")
        except WireError:
            raise BogusResponse("response does not re-encode") from None
        for rr in msg.records():
            if rr.rclass != 1 or rr.owner.labels != rr.owner.lower().labels:
                raise BogusResponse("non-canonical owner or class")
            if rr.rdata.to_wire(False) != rr.rdata.to_wire(True):
                raise BogusResponse("non-canonical names in rdata")
        return msg

    # -- zone keys -------------------------------------------------------

    def _trusted_keys(self, apex: Name, servers: Sequence[str], ds_set: Sequence[DS] | None) -> tuple[DNSKEY, ...] | None:
        pinned = self.store.pinned.get(apex)
        if pinned is None and ds_set is None:
            return None
        answer = self._ask(servers, apex, RRType.DNSKEY)
        rrset = [rr for rr in answer.answers if rr.rrtype == RRType.DNSKEY and rr.owner == apex]
        sigs = [rr for rr in answer.answers if rr.rrtype == RRType.RRSIG]
        if not rrset or not sigs or len(rrset) + len(sigs) != len(answer.answers) or answer.authority or answer.additional:
            raise MissingChain(f"no DNSKEY RRset for {apex}")
        keys = [rr.rdata for rr in rrset]
        if pinned is not None:
            anchors = [k for k in keys if k.flags & 1 and k.key == pinned]
        else:
            anchors = [
                k
                for k in keys
                if k.flags & 1
                and any(
                    d.digest_type == 2
                    and d.algorithm == k.algorithm
                    and d.key_tag == compute_key_tag(k.flags, k.protocol, k.algorithm, k.key)
                    and d.digest == ds_digest(apex, k)
                    for d in ds_set
                )
            ]
        if not anchors:
            raise MissingChain(f"no DNSKEY at {apex} matches the trust anchor")
        now = self.clock()
        self._all_sigs(rrset, sigs, anchors, apex, now)
        return tuple(keys)

    @staticmethod
    def _all_sigs(rrset, sigs, keys, zone, now) -> None:
        if not sigs:
            raise BogusSignature(f"unsigned {RRType.label(rrset[0].rrtype)} RRset at {rrset[0].owner}")
        for sig in sigs:
            verify_rrsig(rrset, sig, keys, zone, now)

    def _ask(self, servers: Sequence[str], name: Name, rrtype: int) -> DnsMessage:
        last: Exception | None = None
        for server in servers:
            try:
                return self.exchange(server, name, rrtype)
            except (Timeout, ServFail) as exc:
                last = exc
        raise last or Timeout("no servers")

    def _root(self) -> _ZoneInfo:
        with self._lock:
            info = self._zones.get(Name(()))
        if info is None:
            keys = self._trusted_keys(Name(()), self.root_servers, self.store.root_ds or None)
            info = _ZoneInfo(Name(()), self.root_servers, keys)
            with self._lock:
                self._zones[Name(())] = info
        return info

    def _child(self, parent: _ZoneInfo, referral: DnsMessage) -> _ZoneInfo:
        ns = [rr for rr in referral.authority if rr.rrtype == RRType.NS]
        if not ns:
            raise BogusResponse("referral without NS records")
        apex = ns[0].owner
        if not apex.is_subdomain_of(parent.apex) or apex == parent.apex:
            raise BogusResponse("referral outside the parent zone")
        with self._lock:
            cached = self._zones.get(apex)
        if cached is not None:
            return cached
        ds_rrs = [rr for rr in referral.authority if rr.rrtype == RRType.DS]
        ds_sigs = [rr for rr in referral.authority if rr.rrtype == RRType.RRSIG]
        ds_set = None
        if parent.keys is not None:
            if not ds_rrs:
                raise MissingChain(f"referral to {apex} carries no DS")
            self._all_sigs(ds_rrs, ds_sigs, parent.keys, parent.apex, self.clock())
            ds_set = [rr.rdata for rr in ds_rrs]
        targets = {rr.rdata.target for rr in ns}
        servers = tuple(
            rr.rdata.address
            for rr in referral.additional
            if rr.rrtype in (RRType.A, RRType.AAAA) and rr.owner in targets
        )
        if not servers:
            raise MissingChain(f"no glue for {apex}")
        info = _ZoneInfo(apex, servers, self._trusted_keys(apex, servers, ds_set))
        with self._lock:
            self._zones[apex] = info
        return info

    def zone_for(self, name: Name) -> tuple[_ZoneInfo, DnsMessage]:
        """Follow referrals from the root; return the answering zone and
        its response to an A query for ``name``."""
        return self._walk(name, RRType.A)

    def _walk(self, name: Name, rrtype: int) -> tuple[_ZoneInfo, DnsMessage]:
        zone = self._root()
        for _ in range(MAX_REFERRALS):
            with self._lock:
                cached = [
                    z
                    for a, z in self._zones.items()
                    if name.is_subdomain_of(a)
                    and a != Name(())
                    and not (a == name and rrtype in (RRType.DS, RRType.ATTEST))
                ]
            deeper = max(cached, key=lambda z: len(z.apex.labels), default=None)
            if deeper is not None and len(deeper.apex.labels) > len(zone.apex.labels):
                zone = deeper
            msg = self._ask(zone.servers, name, rrtype)
            if msg.flags.aa:
                return zone, msg
            child = self._child(zone, msg)
            if (rrtype in (RRType.DS, RRType.ATTEST)) and child.apex == name:
                # parent-side data at a cut is answered authoritatively
                raise BogusResponse(f"referral returned for parent-side {RRType.label(rrtype)}")
            zone = child
        raise ServFail("referral limit exceeded")

    def query(self, name: Name | str, rrtype: int) -> Answer:
        """Resolve and validate one RRset (or its authenticated denial)."""
        name = Name.from_text(name).lower()
        for attempt in range(2):
            zone, msg = self._walk(name, rrtype)
            if zone.keys is None:
                raise MissingChain(f"{zone.apex} is not covered by a trust anchor")
            try:
                return self._validate_answer(zone, msg, name, rrtype)
            except BogusSignature:
                if attempt:
                    raise
                # cached keys may predate a ZSK rollover; refetch once
                self.flush()
        raise AssertionError("unreachable")

    def flush(self) -> None:
        with self._lock:
            self._zones.clear()

    def _validate_answer(self, zone: _ZoneInfo, msg: DnsMessage, name: Name, rrtype: int) -> Answer:
        now = self.clock()
        if msg.additional:
            raise BogusResponse("unexpected additional records")
        if msg.answers:
            if msg.flags.rcode != RCode.NOERROR or msg.authority:
                raise BogusResponse("answer with denial material")
            rrset = [rr for rr in msg.answers if rr.rrtype == rrtype]
            sigs = [rr for rr in msg.answers if rr.rrtype == RRType.RRSIG]
            if not rrset or len(rrset) + len(sigs) != len(msg.answers):
                raise BogusResponse("answer section holds unrelated records")
            for rr in rrset:
                if rr.owner != name:
                    raise BogusResponse("answer owner differs from the question")
            self._all_sigs(rrset, sigs, zone.keys, zone.apex, now)
            return Answer(name, rrtype, zone.apex, RCode.NOERROR, tuple(rrset), min(rr.ttl for rr in rrset))
        denial = self._validate_denial(zone, msg, name, rrtype, now)
        return Answer(name, rrtype, zone.apex, msg.flags.rcode, (), denial)

    def _validate_denial(self, zone: _ZoneInfo, msg: DnsMessage, name: Name, rrtype: int, now: int) -> int:
        groups: dict[tuple[Name, int], list[ResourceRecord]] = {}
        sigs: dict[tuple[Name, int], list[ResourceRecord]] = {}
        for rr in msg.authority:
            if rr.rrtype == RRType.RRSIG:
                sigs.setdefault((rr.owner, rr.rdata.type_covered), []).append(rr)
            else:
                groups.setdefault((rr.owner, rr.rrtype), []).append(rr)
        if set(sigs) != set(groups):
            raise BogusSignature("denial carries unsigned or orphan records")
        soa_key = (zone.apex, RRType.SOA)
        if soa_key not in groups or not isinstance(groups[soa_key][0].rdata, SOA):
            raise BogusResponse("denial lacks the zone SOA")
        nsec3: dict[str, NSEC3] = {}
        for (owner, t), rrset in groups.items():
            self._all_sigs(rrset, sigs[(owner, t)], zone.keys, zone.apex, now)
            if t == RRType.NSEC3:
                if owner.parent() != zone.apex or len(rrset) != 1:
                    raise BogusResponse("NSEC3 record outside the zone")
                nsec3[owner.labels[0].decode("ascii").lower()] = rrset[0].rdata
            elif (owner, t) != soa_key:
                raise BogusResponse("unexpected record in denial")
        if not nsec3:
            raise MissingChain("denial without NSEC3 records")
        params = next(iter(nsec3.values()))

        def h(n: Name) -> str:
            return nsec3_label(n, params.salt, params.iterations)

        def covers(target: str) -> bool:
            for owner, rd in nsec3.items():
                nxt = base64.b32hexencode(rd.next_hashed).decode().lower()
                if owner < target < nxt or (nxt <= owner and (target > owner or target < nxt)):
                    return True
            return False

        if msg.flags.rcode == RCode.NOERROR:
            match = nsec3.get(h(name))
            if match is None:
                raise BogusSignature("NODATA without a matching NSEC3")
            if rrtype in match.types or _CNAME in match.types:
                raise BogusSignature("NSEC3 bitmap asserts the type exists")
        else:
            if name == zone.apex:
                raise BogusSignature("NXDOMAIN for the zone apex")
            ce = name.parent()
            while h(ce) not in nsec3:
                if ce == zone.apex:
                    raise BogusSignature("no closest-encloser proof")
                ce = ce.parent()
            next_closer = Name(name.labels[len(name.labels) - len(ce.labels) - 1 :])
            if not covers(h(next_closer)):
                raise BogusSignature("next closer name not covered")
            if not covers(h(ce.prepend("*"))):
                raise BogusSignature("wildcard not denied")
        return min(rr.ttl for rr in msg.authority)

    def rrset(self, name: Name, rrtype: int) -> list:
        """Validated rdatas (DnsView protocol used by the mock CA)."""
        from .acme import DnssecFailure, ResolutionTimeout

        try:
            return self.query(name, rrtype).rdatas()
        except (Timeout, ServFail) as exc:
            raise ResolutionTimeout(str(exc)) from None
        except VerifierError as exc:
            raise DnssecFailure(f"{exc.code}: {exc}") from None


# ---------------------------------------------------------------------------
# Service verification
# ---------------------------------------------------------------------------


def _attest_owner(name: Name, proto: str, port: int) -> Name:
    return name.prepend(f"_{port}", f"_{proto}")


@dataclass
class Bundle:
    zone: Name
    addresses: Answer
    addresses6: Answer
    attest: list[bytes]
    attest_ttl: int
    tlsa: Answer
    policy: Answer
    used_fragments: bool = False


def _fetch_fragments(resolver: Resolver, owner: Name, pool: ThreadPoolExecutor) -> tuple[list[bytes], int]:
    """Fetch fragment 0, learn the payload length from its prefix, then
    fetch the remaining fragments in parallel."""
    from .zone import decode_fragments, unpack_attest_set  # codec only

    first = resolver.query(owner.prepend("_0", "_attest"), RRType.AAAA)
    if not first.records:
        return [], first.ttl
    head = b"".join(c[2:] for c in sorted(rr.rdata.packed for rr in first.records))
    (payload_len,) = struct.unpack("!I", head[:4])
    count = -(-(payload_len + 4) // (14 * len(first.records)))
    futures = {i: pool.submit(resolver.query, owner.prepend(f"_{i}", "_attest"), RRType.AAAA) for i in range(1, count)}
    frags = {0: first.records}
    ttl = first.ttl
    for i, fut in futures.items():
        ans = fut.result()
        frags[i] = ans.records
        ttl = min(ttl, ans.ttl)
    return unpack_attest_set(decode_fragments(frags)), ttl


def resolve_bundle(
    resolver: Resolver,
    name: Name | str,
    proto: str = "https",
    port: int = 443,
    pool: ThreadPoolExecutor | None = None,
    use_fragments: bool = False,
) -> Bundle:
    """Issue the A/AAAA, ATTEST, TLSA and _policy queries concurrently."""
    name = Name.from_text(name).lower()
    own = pool is None
    pool = pool or ThreadPoolExecutor(max_workers=8)
    try:
        zone, _ = resolver.zone_for(name)
        owner = _attest_owner(name, proto, port)
        fa = pool.submit(resolver.query, name, RRType.A)
        f6 = pool.submit(resolver.query, name, RRType.AAAA)
        ft = pool.submit(resolver.query, owner, RRType.TLSA)
        fp = pool.submit(resolver.query, zone.apex.prepend("_policy"), RRType.TXT)
        used_fragments = use_fragments
        if not use_fragments:
            try:
                att = resolver.query(owner, RRType.ATTEST)
                reports, attest_ttl = [r.data for r in att.rdatas()], att.ttl
            except (BogusResponse, ServFail):
                used_fragments = True
        if used_fragments:
            reports, attest_ttl = _fetch_fragments(resolver, owner, pool)
        return Bundle(zone.apex, fa.result(), f6.result(), reports, attest_ttl, ft.result(), fp.result(), used_fragments)
    finally:
        if own:
            pool.shutdown(wait=True)


def _select_policy(
    store: TrustStore,
    name: Name,
    bundle: Bundle,
    resolver: Resolver,
    approve: Callable[[str], bool] | None,
    now: int,
) -> tuple[str, str]:
    local = store.local_policies.get(name) or store.local_policies.get(bundle.zone)
    if local is not None:
        return local, "local"
    served = b"".join(t.joined() for t in bundle.policy.rdatas()).decode("utf-8", "replace")
    if store.discovery == "off":
        raise NoLocalPolicy(f"no local policy for {name} and discovery is off")
    if store.discovery == "trust-parent":
        parent_attest = resolver.query(bundle.zone, RRType.ATTEST)
        if not parent_attest.records:
            raise DiscoveryRefused(f"{bundle.zone} has no attested delegation")
        for rd in parent_attest.rdatas():
            try:
                rep = attest.report_decode(rd.data)
                attest.verify_report(rep, store.platform_anchors, now, store.max_report_age)
            except AttestationError as exc:
                raise DiscoveryRefused(f"delegation attestation invalid: {exc.code}") from None
            if store.adns_policy is not None and not eval_policy(
                store.adns_policy, attest.extract_claims(rep), rep.config.as_map()
            ):
                raise DiscoveryRefused("delegated instance fails the aDNS policy")
        if not served:
            raise DiscoveryRefused("zone serves no policy")
        return served, "trust-parent"
    if store.discovery == "prompt":
        if not served or approve is None or not approve(served):
            raise DiscoveryRefused("policy not approved")
        return served, "prompt"
    raise DiscoveryRefused(f"unknown discovery mode {store.discovery!r}")


def finish_verification(
    bundle: Bundle,
    name: Name,
    proto: str,
    port: int,
    store: TrustStore,
    resolver: Resolver,
    now: int,
    approve: Callable[[str], bool] | None = None,
) -> VerifiedService:
    if not bundle.attest:
        raise AttestationFailed(f"no ATTEST record for {name}")
    policy, source = _select_policy(store, name, bundle, resolver, approve, now)
    owner = _attest_owner(name, proto, port)
    expected: list[bytes] = []
    claims_list = []
    digests = []
    for raw in bundle.attest:
        try:
            report = attest.report_decode(raw)
            claims = attest.verify_report(report, store.platform_anchors, now, store.max_report_age)
        except AttestationError as exc:
            raise AttestationFailed(f"{exc.code}: {exc}") from None
        cfg = report.config
        matching = [
            o for o in cfg.origins
            if o.port == port and o.protocol == proto and cfg.origin_name(o).lower() == name
        ]
        if not matching or cfg.service.lower() != bundle.zone:
            raise BindingMismatch("report does not claim this origin")
        try:
            if not eval_policy(policy, claims, cfg.as_map()):
                raise PolicyRejected(f"policy rejects instance {cfg.instance_id}")
        except PolicyError as exc:
            raise PolicyRejected(f"{type(exc).__name__}: {exc}") from None
        for o in matching:
            key = report.keys[o.key_index].public_key
            if key not in expected:
                expected.append(key)
        claims_list.append(claims)
        digests.append(hashlib.sha256(raw).hexdigest())
    pinned = {rd.association for rd in bundle.tlsa.rdatas() if (rd.usage, rd.selector, rd.matching_type) == (3, 1, 0)}
    if pinned != {spki_der(k) for k in expected}:
        raise BindingMismatch("TLSA records do not match the attested keys")
    addresses = tuple(rd.address for rd in bundle.addresses.rdatas() + bundle.addresses6.rdatas())
    ttls = [bundle.attest_ttl, bundle.tlsa.ttl, bundle.policy.ttl]
    ttls += [a.ttl for a in (bundle.addresses, bundle.addresses6) if a.records]
    valid_until = now + min(ttls)
    if valid_until <= now:
        raise Expired("records carry no remaining lifetime")
    return VerifiedService(
        name, port, proto, addresses, tuple(expected), tuple(claims_list), policy, source, tuple(digests), valid_until
    )


class PendingVerification:
    """Handle returned by :func:`start_verify_service`; ``result`` blocks."""

    def __init__(self, future: Future):
        self._future = future

    def done(self) -> bool:
        return self._future.done()

    def result(self, timeout: float | None = None) -> VerifiedService:
        return self._future.result(timeout)


def start_verify_service(
    resolver: Resolver,
    name: Name | str,
    proto: str = "https",
    port: int = 443,
    approve: Callable[[str], bool] | None = None,
    pool: ThreadPoolExecutor | None = None,
    use_fragments: bool = False,
) -> PendingVerification:
    """Phase one: kick off resolution and verification in the background,
    so the caller can overlap its own connection setup."""
    name = Name.from_text(name).lower()
    pool = pool or ThreadPoolExecutor(max_workers=8)

    def run() -> VerifiedService:
        now = resolver.clock()
        bundle = resolve_bundle(resolver, name, proto, port, pool, use_fragments)
        return finish_verification(bundle, name, proto, port, resolver.store, resolver, now, approve)

    outer = ThreadPoolExecutor(max_workers=1)
    fut = outer.submit(run)
    outer.shutdown(wait=False)
    return PendingVerification(fut)


def verify_service(
    resolver: Resolver,
    name: Name | str,
    proto: str = "https",
    port: int = 443,
    approve: Callable[[str], bool] | None = None,
    use_fragments: bool = False,
) -> VerifiedService:
    return start_verify_service(resolver, name, proto, port, approve, use_fragments=use_fragments).result()


def check_peer_key(v: VerifiedService, presented_key: bytes, now: int) -> bool:
    if now >= v.valid_until:
        raise Expired(f"verification expired at {v.valid_until}")
    return bytes(presented_key) in v.expected_keys


# ---------------------------------------------------------------------------
# Instance verification and audit
# ---------------------------------------------------------------------------


def verify_instance(resolver: Resolver, adns_name: Name | str, rpc_address: str) -> bytes:
    """Fetch an instance's endorsement, check it against the aDNS policy and
    the served DNSKEY, and pin its KSK. Returns the pinned key."""
    store = resolver.store
    apex = Name.from_text(adns_name).lower()
    status, body = resolver.transport.rpc(rpc_address, "GET", "/endorsements", None)
    if status != 200:
        raise ServFail(f"/endorsements returned {status}")
    try:
        report = attest.report_decode(bytes.fromhex(body["report"]))
        claims = attest.verify_report(report, store.platform_anchors, resolver.clock(), store.max_report_age)
    except (AttestationError, KeyError, ValueError) as exc:
        raise AttestationFailed(f"endorsement: {exc}") from None
    if report.config.service.lower() != apex:
        raise BindingMismatch("endorsement is for another zone")
    if store.adns_policy is None:
        raise NoLocalPolicy("no aDNS verification policy configured")
    try:
        ok = eval_policy(store.adns_policy, claims, report.config.as_map())
    except PolicyError as exc:
        raise PolicyRejected(f"{type(exc).__name__}: {exc}") from None
    if not ok:
        raise PolicyRejected("instance fails the aDNS verification policy")
    ksks = report.keys_with_usage(KeyUsage.KSK)
    zone, _ = resolver.zone_for(apex)
    msg = resolver._ask(zone.servers, apex, RRType.DNSKEY)
    served = [rr.rdata.key for rr in msg.answers if rr.rrtype == RRType.DNSKEY and rr.rdata.flags & 1]
    if not ksks or served != [ksks[0]]:
        raise KskMismatch("served KSK differs from the attested KSK")
    store.pin(apex, ksks[0])
    with resolver._lock:
        resolver._zones.pop(apex, None)
    return ksks[0]


@dataclass
class AuditVerdict:
    findings: list[dict]
    registrations: list[dict]
    replay_digest: str | None
    snapshot_digest: str | None

    @property
    def clean(self) -> bool:
        return not self.findings

    def to_json(self) -> dict:
        return {
            "clean": self.clean,
            "findings": self.findings,
            "registrations": self.registrations,
            "replay_digest": self.replay_digest,
            "snapshot_digest": self.snapshot_digest,
        }


def audit(
    ledger_dump: Sequence[Mapping],
    snapshot: Sequence[Mapping] | None = None,
    signed_root: Mapping | None = None,
    receipts: Sequence[Mapping] = (),
    receipt_key: bytes | None = None,
) -> AuditVerdict:
    """Replay a ledger dump and compare it with a served snapshot and with
    the instance's signed root and receipts."""
    from .ledger import LedgerEntry, Receipt, check_sequence, compute_root, verify_receipt, LedgerError
    from .ledger import root_statement
    from .zone import records_digest, records_from_json, replay_state, build_rrsets
    from .keys import verify_signature

    findings: list[dict] = []
    entries = [LedgerEntry.from_json(e) for e in ledger_dump]
    for raw, entry in zip(ledger_dump, entries):
        if "leaf" in raw and raw["leaf"] != hashlib.sha256(b"\x00" + entry.to_bytes()).hexdigest():
            findings.append({"finding": "LeafMismatch", "seq": entry.seq})
    try:
        check_sequence(entries)
    except LedgerError as exc:
        findings.append({"finding": exc.code, "message": str(exc)})
    if signed_root is not None:
        size = int(signed_root["tree_size"])
        root = bytes.fromhex(signed_root["root"])
        if receipt_key is not None and not verify_signature(
            receipt_key, bytes.fromhex(signed_root["signature"]), root_statement(size, root)
        ):
            findings.append({"finding": "BadRootSignature"})
        if size > len(entries) or compute_root(entries[:size]) != root:
            findings.append({"finding": "PrefixMismatch", "tree_size": size, "entries": len(entries)})
    for item in receipts:
        receipt = Receipt.from_json(item["receipt"])
        entry = LedgerEntry.from_json(item["entry"])
        if receipt_key is None or not verify_receipt(entry.to_bytes(), receipt, receipt_key):
            findings.append({"finding": "BadReceipt", "seq": receipt.seq})
        elif receipt.tree_size > len(entries) or compute_root(entries[: receipt.tree_size]) != receipt.root_digest:
            findings.append({"finding": "PrefixMismatch", "seq": receipt.seq, "tree_size": receipt.tree_size})
    registrations = []
    replay_digest = None
    try:
        data = replay_state(entries)
        replay_digest = records_digest(build_rrsets(data))
        for reg in sorted(data.registrations.values(), key=lambda r: r.seq):
            registrations.append(
                {
                    "seq": reg.seq,
                    "tee": reg.tee.to_text(),
                    "role": reg.role,
                    "report_digest": hashlib.sha256(reg.encoded).hexdigest(),
                    "claims": reg.claims,
                    "policy_passed": True,
                }
            )
    except Exception as exc:  # any replay failure is a finding, not a crash
        findings.append({"finding": "ReplayDivergence", "message": f"{type(exc).__name__}: {exc}"})
    snapshot_digest = None
    if snapshot is not None:
        snapshot_digest = records_digest(records_from_json(snapshot))
        if replay_digest is not None and snapshot_digest != replay_digest:
            findings.append({"finding": "ReplayDivergence", "message": "served zone differs from ledger replay"})
    return AuditVerdict(findings, registrations, replay_digest, snapshot_digest)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, VerifierError):
        return exc.exit_code
    return 1


def load_json(path: str):
    """A JSON document, or JSON lines (returned as a list)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return [json.loads(line) for line in text.splitlines() if line.strip()]
