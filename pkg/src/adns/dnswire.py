"""DNS message and resource-record wire codec.

Covers the record types an attested zone serves (RFC 1035, 3596, 4034,
5155, 6698, 8659) plus the private-use ATTEST type, and the RFC 4034
canonical forms used when signing RRsets.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass, field
from typing import ClassVar, Iterable, Sequence

__all__ = [
    "RRType",
    "RCode",
    "CLASS_IN",
    "WireError",
    "MalformedMessage",
    "MalformedRdata",
    "MessageTooLarge",
    "MixedRRset",
    "Name",
    "ResourceRecord",
    "Question",
    "Flags",
    "DnsMessage",
    "decode_message",
    "encode_message",
    "canonical_rrset_bytes",
    "encode_rdata",
    "decode_rdata",
    "frame_tcp",
    "unframe_tcp",
]

CLASS_IN = 1
MAX_NAME_LEN = 255
MAX_LABEL_LEN = 63
HEADER_LEN = 12


class RRType(enum.IntEnum):
    A = 1
    NS = 2
    SOA = 6
    TXT = 16
    AAAA = 28
    DS = 43
    RRSIG = 46
    DNSKEY = 48
    NSEC3 = 50
    NSEC3PARAM = 51
    TLSA = 52
    CAA = 257
    ATTEST = 65280

    @classmethod
    def label(cls, value: int) -> str:
        try:
            return cls(value).name
        except ValueError:
            return f"TYPE{value}"


class RCode(enum.IntEnum):
    NOERROR = 0
    FORMERR = 1
    SERVFAIL = 2
    NXDOMAIN = 3
    NOTIMP = 4
    REFUSED = 5


class WireError(Exception):
    """Base class for codec errors."""


class MalformedMessage(WireError):
    pass


class MalformedRdata(WireError):
    pass


class MessageTooLarge(WireError):
    pass


class MixedRRset(WireError):
    pass


# ---------------------------------------------------------------------------
# Names
# ---------------------------------------------------------------------------


class Name:
    """An absolute domain name as a tuple of label octet-strings.

    Equality and hashing ignore ASCII case; the original spelling is kept
    for encoding so that a response can echo the exact question bytes.
    """

    __slots__ = ("labels", "_key")

    def __init__(self, labels: Iterable[bytes] = ()):
        labels = tuple(bytes(label) for label in labels)
        total = 1
        for label in labels:
            if not 1 <= len(label) <= MAX_LABEL_LEN:
                raise ValueError(f"label length {len(label)} out of range")
            total += len(label) + 1
        if total > MAX_NAME_LEN:
            raise ValueError(f"name too long ({total} octets)")
        self.labels = labels
        self._key = tuple(label.lower() for label in labels)

    @classmethod
    def from_text(cls, text: str | Name) -> Name:
        if isinstance(text, Name):
            return text
        text = text.strip()
        if text in ("", "."):
            return cls(())
        if text.endswith("."):
            text = text[:-1]
        return cls(part.encode("ascii") for part in text.split("."))

    def to_text(self) -> str:
        if not self.labels:
            return "."
        return ".".join(label.decode("ascii", "backslashreplace") for label in self.labels)

    def __str__(self) -> str:
        return self.to_text()

    def __repr__(self) -> str:
        return f"Name({self.to_text()!r})"

    def __eq__(self, other: object) -> bool:
        if isinstance(other, str):
            other = Name.from_text(other)
        if not isinstance(other, Name):
            return NotImplemented
        return self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __len__(self) -> int:
        return len(self.labels)

    def __lt__(self, other: Name) -> bool:
        # RFC 4034 section 6.1 canonical ordering: compare labels right to left.
        return self._key[::-1] < other._key[::-1]

    def lower(self) -> Name:
        return Name(self._key)

    def to_wire(self, canonical: bool = False) -> bytes:
        labels = self._key if canonical else self.labels
        out = bytearray()
        for label in labels:
            out.append(len(label))
            out += label
        out.append(0)
        return bytes(out)

    @property
    def wire_length(self) -> int:
        return sum(len(label) + 1 for label in self.labels) + 1

    def parent(self) -> Name:
        if not self.labels:
            raise ValueError("the root has no parent")
        return Name(self.labels[1:])

    def prepend(self, *labels: str | bytes) -> Name:
        raw = [label.encode("ascii") if isinstance(label, str) else label for label in labels]
        return Name(tuple(raw) + self.labels)

    def is_subdomain_of(self, other: Name) -> bool:
        """True when self equals other or lies below it."""
        n = len(other._key)
        if n > len(self._key):
            return False
        return n == 0 or self._key[-n:] == other._key

    def relativize(self, origin: Name) -> tuple[bytes, ...]:
        if not self.is_subdomain_of(origin):
            raise ValueError(f"{self} is not under {origin}")
        return self.labels[: len(self.labels) - len(origin.labels)]

    def first_label(self) -> bytes:
        return self.labels[0] if self.labels else b""


def _read_name(msg: bytes, offset: int) -> tuple[Name, int]:
    """Decode a possibly-compressed name; returns (name, offset after it)."""
    labels: list[bytes] = []
    end: int | None = None
    pos = offset
    total = 1
    hops = 0
    while True:
        if pos >= len(msg):
            raise MalformedMessage("name runs past end of message")
        length = msg[pos]
        if length & 0xC0 == 0xC0:
            if pos + 1 >= len(msg):
                raise MalformedMessage("truncated compression pointer")
            target = ((length & 0x3F) << 8) | msg[pos + 1]
            if end is None:
                end = pos + 2
            # Pointers must go strictly backwards; this also rules out cycles.
            if target >= pos or hops > 127:
                raise MalformedMessage("compression pointer loop")
            hops += 1
            pos = target
            continue
        if length & 0xC0:
            raise MalformedMessage(f"unsupported label type 0x{length:02x}")
        pos += 1
        if length == 0:
            break
        if pos + length > len(msg):
            raise MalformedMessage("label runs past end of message")
        total += length + 1
        if total > MAX_NAME_LEN:
            raise MalformedMessage("name exceeds 255 octets")
        labels.append(msg[pos : pos + length])
        pos += length
    return Name(labels), (end if end is not None else pos)


# ---------------------------------------------------------------------------
# Rdata
# ---------------------------------------------------------------------------


def _type_bitmap(types: Iterable[int]) -> bytes:
    windows: dict[int, bytearray] = {}
    for t in sorted(set(types)):
        window, low = divmod(t, 256)
        bits = windows.setdefault(window, bytearray(32))
        bits[low // 8] |= 0x80 >> (low % 8)
    out = bytearray()
    for window in sorted(windows):
        bits = windows[window].rstrip(b"\x00")
        out += bytes((window, len(bits))) + bits
    return bytes(out)


def _parse_type_bitmap(data: bytes) -> tuple[int, ...]:
    types: list[int] = []
    pos = 0
    last_window = -1
    while pos < len(data):
        if pos + 2 > len(data):
            raise MalformedRdata("truncated type bitmap window")
        window, length = data[pos], data[pos + 1]
        if window <= last_window or not 1 <= length <= 32 or pos + 2 + length > len(data):
            raise MalformedRdata("bad type bitmap window")
        bits = data[pos + 2 : pos + 2 + length]
        if bits[-1] == 0:
            raise MalformedRdata("type bitmap window has trailing zero octet")
        for i, octet in enumerate(bits):
            for bit in range(8):
                if octet & (0x80 >> bit):
                    types.append(window * 256 + i * 8 + bit)
        last_window = window
        pos += 2 + length
    return tuple(types)


class Rdata:
    """Base for typed rdata payloads."""

    rrtype: ClassVar[int]

    def to_wire(self, canonical: bool = False) -> bytes:
        raise NotImplementedError

    @classmethod
    def from_wire(cls, msg: bytes, offset: int, length: int) -> Rdata:
        raise NotImplementedError


@dataclass(frozen=True)
class A(Rdata):
    address: str
    rrtype: ClassVar[int] = RRType.A

    def to_wire(self, canonical: bool = False) -> bytes:
        return ipaddress.IPv4Address(self.address).packed

    @classmethod
    def from_wire(cls, msg, offset, length):
        if length != 4:
            raise MalformedRdata("A rdata must be 4 octets")
        return cls(str(ipaddress.IPv4Address(msg[offset : offset + 4])))


@dataclass(frozen=True)
class AAAA(Rdata):
    address: str
    rrtype: ClassVar[int] = RRType.AAAA

    def to_wire(self, canonical: bool = False) -> bytes:
        return ipaddress.IPv6Address(self.address).packed

    @classmethod
    def from_wire(cls, msg, offset, length):
        if length != 16:
            raise MalformedRdata("AAAA rdata must be 16 octets")
        return cls(str(ipaddress.IPv6Address(msg[offset : offset + 16])))

    @classmethod
    def from_bytes(cls, raw: bytes) -> AAAA:
        return cls(str(ipaddress.IPv6Address(raw)))

    @property
    def packed(self) -> bytes:
        return ipaddress.IPv6Address(self.address).packed


@dataclass(frozen=True)
class NS(Rdata):
    target: Name
    rrtype: ClassVar[int] = RRType.NS

    def to_wire(self, canonical: bool = False) -> bytes:
        return self.target.to_wire(canonical)

    @classmethod
    def from_wire(cls, msg, offset, length):
        name, end = _read_name(msg, offset)
        if end != offset + length:
            raise MalformedRdata("NS rdata length mismatch")
        return cls(name)


@dataclass(frozen=True)
class SOA(Rdata):
    mname: Name
    rname: Name
    serial: int
    refresh: int
    retry: int
    expire: int
    minimum: int
    rrtype: ClassVar[int] = RRType.SOA

    def to_wire(self, canonical: bool = False) -> bytes:
        return (
            self.mname.to_wire(canonical)
            + self.rname.to_wire(canonical)
            + struct.pack("!IIIII", self.serial, self.refresh, self.retry, self.expire, self.minimum)
        )

    @classmethod
    def from_wire(cls, msg, offset, length):
        mname, pos = _read_name(msg, offset)
        rname, pos = _read_name(msg, pos)
        if pos + 20 != offset + length:
            raise MalformedRdata("SOA rdata length mismatch")
        return cls(mname, rname, *struct.unpack("!IIIII", msg[pos : pos + 20]))


@dataclass(frozen=True)
class TXT(Rdata):
    strings: tuple[bytes, ...]
    rrtype: ClassVar[int] = RRType.TXT

    def __post_init__(self):
        if not self.strings or any(len(s) > 255 for s in self.strings):
            raise MalformedRdata("TXT needs 1+ strings of at most 255 octets")

    @classmethod
    def from_text_chunks(cls, text: str) -> TXT:
        raw = text.encode("utf-8")
        chunks = tuple(raw[i : i + 255] for i in range(0, len(raw), 255)) or (b"",)
        return cls(chunks)

    def joined(self) -> bytes:
        return b"".join(self.strings)

    def to_wire(self, canonical: bool = False) -> bytes:
        return b"".join(bytes((len(s),)) + s for s in self.strings)

    @classmethod
    def from_wire(cls, msg, offset, length):
        strings = []
        pos, end = offset, offset + length
        while pos < end:
            n = msg[pos]
            if pos + 1 + n > end:
                raise MalformedRdata("TXT string overruns rdata")
            strings.append(msg[pos + 1 : pos + 1 + n])
            pos += 1 + n
        if not strings:
            raise MalformedRdata("empty TXT rdata")
        return cls(tuple(strings))


@dataclass(frozen=True)
class DS(Rdata):
    key_tag: int
    algorithm: int
    digest_type: int
    digest: bytes
    rrtype: ClassVar[int] = RRType.DS

    def to_wire(self, canonical: bool = False) -> bytes:
        return struct.pack("!HBB", self.key_tag, self.algorithm, self.digest_type) + self.digest

    @classmethod
    def from_wire(cls, msg, offset, length):
        if length < 5:
            raise MalformedRdata("DS rdata too short")
        tag, alg, dtype = struct.unpack("!HBB", msg[offset : offset + 4])
        return cls(tag, alg, dtype, msg[offset + 4 : offset + length])


@dataclass(frozen=True)
class DNSKEY(Rdata):
    flags: int
    protocol: int
    algorithm: int
    key: bytes
    rrtype: ClassVar[int] = RRType.DNSKEY

    ZONE: ClassVar[int] = 0x0100
    SEP: ClassVar[int] = 0x0001

    def to_wire(self, canonical: bool = False) -> bytes:
        return struct.pack("!HBB", self.flags, self.protocol, self.algorithm) + self.key

    @classmethod
    def from_wire(cls, msg, offset, length):
        if length < 5:
            raise MalformedRdata("DNSKEY rdata too short")
        flags, proto, alg = struct.unpack("!HBB", msg[offset : offset + 4])
        return cls(flags, proto, alg, msg[offset + 4 : offset + length])

    @property
    def is_ksk(self) -> bool:
        return bool(self.flags & self.SEP)


@dataclass(frozen=True)
class RRSIG(Rdata):
    type_covered: int
    algorithm: int
    labels: int
    original_ttl: int
    expiration: int
    inception: int
    key_tag: int
    signer: Name
    signature: bytes
    rrtype: ClassVar[int] = RRType.RRSIG

    def header_wire(self, canonical: bool = True) -> bytes:
        """The rdata minus the signature field (what gets signed)."""
        return (
            struct.pack(
                "!HBBIIIH",
                self.type_covered,
                self.algorithm,
                self.labels,
                self.original_ttl,
                self.expiration,
                self.inception,
                self.key_tag,
            )
            + self.signer.to_wire(canonical)
        )

    def to_wire(self, canonical: bool = False) -> bytes:
        return self.header_wire(canonical) + self.signature

    @classmethod
    def from_wire(cls, msg, offset, length):
        if length < 19:
            raise MalformedRdata("RRSIG rdata too short")
        fixed = struct.unpack("!HBBIIIH", msg[offset : offset + 18])
        signer, pos = _read_name(msg, offset + 18)
        end = offset + length
        if pos > end:
            raise MalformedRdata("RRSIG signer overruns rdata")
        return cls(*fixed, signer, msg[pos:end])


@dataclass(frozen=True)
class NSEC3(Rdata):
    hash_algorithm: int
    flags: int
    iterations: int
    salt: bytes
    next_hashed: bytes
    types: tuple[int, ...]
    rrtype: ClassVar[int] = RRType.NSEC3

    def to_wire(self, canonical: bool = False) -> bytes:
        return (
            struct.pack("!BBHB", self.hash_algorithm, self.flags, self.iterations, len(self.salt))
            + self.salt
            + bytes((len(self.next_hashed),))
            + self.next_hashed
            + _type_bitmap(self.types)
        )

    @classmethod
    def from_wire(cls, msg, offset, length):
        end = offset + length
        if length < 6:
            raise MalformedRdata("NSEC3 rdata too short")
        alg, flags, iters, salt_len = struct.unpack("!BBHB", msg[offset : offset + 5])
        pos = offset + 5
        salt = msg[pos : pos + salt_len]
        pos += salt_len
        if pos >= end:
            raise MalformedRdata("NSEC3 salt overruns rdata")
        hash_len = msg[pos]
        pos += 1
        if hash_len == 0 or pos + hash_len > end:
            raise MalformedRdata("NSEC3 hash overruns rdata")
        nxt = msg[pos : pos + hash_len]
        pos += hash_len
        return cls(alg, flags, iters, salt, nxt, _parse_type_bitmap(msg[pos:end]))


@dataclass(frozen=True)
class NSEC3PARAM(Rdata):
    hash_algorithm: int
    flags: int
    iterations: int
    salt: bytes
    rrtype: ClassVar[int] = RRType.NSEC3PARAM

    def to_wire(self, canonical: bool = False) -> bytes:
        return struct.pack("!BBHB", self.hash_algorithm, self.flags, self.iterations, len(self.salt)) + self.salt

    @classmethod
    def from_wire(cls, msg, offset, length):
        if length < 5:
            raise MalformedRdata("NSEC3PARAM rdata too short")
        alg, flags, iters, salt_len = struct.unpack("!BBHB", msg[offset : offset + 5])
        if 5 + salt_len != length:
            raise MalformedRdata("NSEC3PARAM length mismatch")
        return cls(alg, flags, iters, msg[offset + 5 : offset + length])


@dataclass(frozen=True)
class TLSA(Rdata):
    usage: int
    selector: int
    matching_type: int
    association: bytes
    rrtype: ClassVar[int] = RRType.TLSA

    def to_wire(self, canonical: bool = False) -> bytes:
        return bytes((self.usage, self.selector, self.matching_type)) + self.association

    @classmethod
    def from_wire(cls, msg, offset, length):
        if length < 3:
            raise MalformedRdata("TLSA rdata too short")
        u, s, m = msg[offset : offset + 3]
        return cls(u, s, m, msg[offset + 3 : offset + length])


@dataclass(frozen=True)
class CAA(Rdata):
    flags: int
    tag: str
    value: bytes
    rrtype: ClassVar[int] = RRType.CAA

    def __post_init__(self):
        if not 1 <= len(self.tag) <= 255 or not self.tag.isalnum():
            raise MalformedRdata(f"bad CAA tag {self.tag!r}")

    def to_wire(self, canonical: bool = False) -> bytes:
        tag = self.tag.encode("ascii")
        return bytes((self.flags, len(tag))) + tag + self.value

    @classmethod
    def from_wire(cls, msg, offset, length):
        if length < 2:
            raise MalformedRdata("CAA rdata too short")
        flags, tag_len = msg[offset], msg[offset + 1]
        if tag_len == 0 or 2 + tag_len > length:
            raise MalformedRdata("CAA tag overruns rdata")
        try:
            tag = msg[offset + 2 : offset + 2 + tag_len].decode("ascii")
            return cls(flags, tag, msg[offset + 2 + tag_len : offset + length])
        except (UnicodeDecodeError, MalformedRdata) as exc:
            raise MalformedRdata(str(exc)) from None


@dataclass(frozen=True)
class ATTEST(Rdata):
    """Opaque compressed attestation report."""

    data: bytes
    rrtype: ClassVar[int] = RRType.ATTEST

    def to_wire(self, canonical: bool = False) -> bytes:
        return self.data

    @classmethod
    def from_wire(cls, msg, offset, length):
        return cls(msg[offset : offset + length])


@dataclass(frozen=True)
class Unknown(Rdata):
    type_code: int
    data: bytes

    @property
    def rrtype(self) -> int:  # type: ignore[override]
        return self.type_code

    def to_wire(self, canonical: bool = False) -> bytes:
        return self.data


_CODECS: dict[int, type[Rdata]] = {
    cls.rrtype: cls
    for cls in (A, AAAA, NS, SOA, TXT, DS, DNSKEY, RRSIG, NSEC3, NSEC3PARAM, TLSA, CAA, ATTEST)
}


def encode_rdata(rdata: Rdata, canonical: bool = False) -> bytes:
    return rdata.to_wire(canonical)


def decode_rdata(rrtype: int, data: bytes, msg: bytes | None = None, offset: int | None = None) -> Rdata:
    """Decode rdata of the given type. Names may point back into ``msg``."""
    if msg is None:
        msg, offset = data, 0
    codec = _CODECS.get(rrtype)
    if codec is None:
        return Unknown(rrtype, bytes(msg[offset : offset + len(data)]))
    try:
        return codec.from_wire(msg, offset, len(data))
    except MalformedMessage as exc:
        raise MalformedRdata(str(exc)) from None
    except (ValueError, struct.error, IndexError) as exc:
        raise MalformedRdata(f"{RRType.label(rrtype)}: {exc}") from None


@dataclass(frozen=True)
class ResourceRecord:
    owner: Name
    rrtype: int
    ttl: int
    rdata: Rdata
    rclass: int = CLASS_IN

    def __post_init__(self):
        if not 0 <= self.ttl <= 0xFFFFFFFF:
            raise ValueError("ttl out of range")


@dataclass(frozen=True)
class Question:
    name: Name
    qtype: int
    qclass: int = CLASS_IN


@dataclass(frozen=True)
class Flags:
    qr: bool = False
    opcode: int = 0
    aa: bool = False
    tc: bool = False
    rd: bool = False
    ra: bool = False
    z: bool = False
    ad: bool = False
    cd: bool = False
    rcode: int = 0

    def to_int(self) -> int:
        return (
            (self.qr << 15)
            | ((self.opcode & 0xF) << 11)
            | (self.aa << 10)
            | (self.tc << 9)
            | (self.rd << 8)
            | (self.ra << 7)
            | (self.z << 6)
            | (self.ad << 5)
            | (self.cd << 4)
            | (self.rcode & 0xF)
        )

    @classmethod
    def from_int(cls, v: int) -> Flags:
        return cls(
            qr=bool(v >> 15 & 1),
            opcode=v >> 11 & 0xF,
            aa=bool(v >> 10 & 1),
            tc=bool(v >> 9 & 1),
            rd=bool(v >> 8 & 1),
            ra=bool(v >> 7 & 1),
            z=bool(v >> 6 & 1),
            ad=bool(v >> 5 & 1),
            cd=bool(v >> 4 & 1),
            rcode=v & 0xF,
        )


@dataclass(frozen=True)
class DnsMessage:
    id: int
    flags: Flags = field(default_factory=Flags)
    question: Question | None = None
    answers: tuple[ResourceRecord, ...] = ()
    authority: tuple[ResourceRecord, ...] = ()
    additional: tuple[ResourceRecord, ...] = ()

    @classmethod
    def query(cls, id: int, name: Name | str, qtype: int, rd: bool = False) -> DnsMessage:
        return cls(id=id, flags=Flags(rd=rd), question=Question(Name.from_text(name), qtype))

    def records(self) -> Iterable[ResourceRecord]:
        yield from self.answers
        yield from self.authority
        yield from self.additional


# ---------------------------------------------------------------------------
# Message codec
# ---------------------------------------------------------------------------


def _encode_rr(rr: ResourceRecord, qname: Name | None) -> bytes:
    if qname is not None and rr.owner.labels == qname.labels:
        owner = b"\xc0\x0c"
    else:
        owner = rr.owner.to_wire()
    rdata = rr.rdata.to_wire()
    if len(rdata) > 0xFFFF:
        raise MessageTooLarge("rdata exceeds 65535 octets")
    return owner + struct.pack("!HHIH", rr.rrtype, rr.rclass, rr.ttl, len(rdata)) + rdata


def encode_message(
    m: DnsMessage,
    max_size: int = 65535,
    allow_truncate: bool = False,
    compress: bool = True,
) -> bytes:
    """Encode ``m``; owner names equal to the question name become pointers.

    If the result exceeds ``max_size`` and ``allow_truncate`` is set, the
    message is re-encoded with tc=1 and empty record sections.
    """
    head = bytearray()
    qname = None
    if m.question is not None:
        qname = m.question.name
        head += qname.to_wire() + struct.pack("!HH", m.question.qtype, m.question.qclass)
    ptr_name = qname if compress else None
    body = bytearray(head)
    for section in (m.answers, m.authority, m.additional):
        for rr in section:
            body += _encode_rr(rr, ptr_name)
    counts = (1 if m.question else 0, len(m.answers), len(m.authority), len(m.additional))
    out = struct.pack("!HH4H", m.id, m.flags.to_int(), *counts) + body
    if len(out) <= max_size:
        return bytes(out)
    if not allow_truncate:
        raise MessageTooLarge(f"message is {len(out)} octets, limit {max_size}")
    flags = Flags(**{**m.flags.__dict__, "tc": True})
    out = struct.pack("!HH4H", m.id, flags.to_int(), counts[0], 0, 0, 0) + head
    if len(out) > max_size:
        raise MessageTooLarge("question alone exceeds size limit")
    return bytes(out)


def decode_message(data: bytes) -> DnsMessage:
    data = bytes(data)
    if len(data) < HEADER_LEN:
        raise MalformedMessage("message shorter than header")
    mid, flags, qd, an, ns, ar = struct.unpack("!HH4H", data[:HEADER_LEN])
    if qd > 1:
        raise MalformedMessage("at most one question is supported")
    pos = HEADER_LEN
    question = None
    if qd:
        name, pos = _read_name(data, pos)
        if pos + 4 > len(data):
            raise MalformedMessage("truncated question")
        qtype, qclass = struct.unpack("!HH", data[pos : pos + 4])
        pos += 4
        question = Question(name, qtype, qclass)
    sections = []
    for count in (an, ns, ar):
        rrs = []
        for _ in range(count):
            owner, pos = _read_name(data, pos)
            if pos + 10 > len(data):
                raise MalformedMessage("truncated record header")
            rrtype, rclass, ttl, rdlen = struct.unpack("!HHIH", data[pos : pos + 10])
            pos += 10
            if pos + rdlen > len(data):
                raise MalformedMessage("rdata overruns message")
            try:
                rdata = decode_rdata(rrtype, data[pos : pos + rdlen], data, pos)
            except MalformedRdata as exc:
                raise MalformedMessage(f"bad rdata: {exc}") from None
            pos += rdlen
            rrs.append(ResourceRecord(owner, rrtype, ttl, rdata, rclass))
        sections.append(tuple(rrs))
    if pos != len(data):
        raise MalformedMessage("trailing octets after last record")
    return DnsMessage(mid, Flags.from_int(flags), question, *sections)


def frame_tcp(payload: bytes) -> bytes:
    if len(payload) > 0xFFFF:
        raise MessageTooLarge("TCP message exceeds 65535 octets")
    return struct.pack("!H", len(payload)) + payload


def unframe_tcp(stream: bytes) -> tuple[list[bytes], bytes]:
    """Split a byte stream into complete frames plus any incomplete tail."""
    frames = []
    pos = 0
    while pos + 2 <= len(stream):
        (n,) = struct.unpack("!H", stream[pos : pos + 2])
        if pos + 2 + n > len(stream):
            break
        frames.append(stream[pos + 2 : pos + 2 + n])
        pos += 2 + n
    return frames, stream[pos:]


# ---------------------------------------------------------------------------
# Canonical forms
# ---------------------------------------------------------------------------


def canonical_rrset_bytes(rrset: Sequence[ResourceRecord], original_ttl: int) -> bytes:
    """RFC 4034 section 6.3 canonical RRset encoding, the input to RRSIG."""
    if not rrset:
        raise MixedRRset("empty RRset")
    first = rrset[0]
    for rr in rrset[1:]:
        if rr.owner != first.owner or rr.rrtype != first.rrtype or rr.rclass != first.rclass:
            raise MixedRRset("records differ in owner, type or class")
    owner = first.owner.to_wire(canonical=True)
    rdatas = sorted({rr.rdata.to_wire(canonical=True) for rr in rrset})
    prefix = owner + struct.pack("!HHI", first.rrtype, first.rclass, original_ttl)
    return b"".join(prefix + struct.pack("!H", len(rd)) + rd for rd in rdatas)
