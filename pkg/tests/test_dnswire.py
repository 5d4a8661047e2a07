from __future__ import annotations

import struct

import dns.message
import dns.name
import dns.rdataclass
import dns.rdatatype
import dns.rrset
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from adns.dnswire import (
    A,
    AAAA,
    ATTEST,
    CAA,
    DNSKEY,
    DS,
    NS,
    NSEC3,
    NSEC3PARAM,
    RRSIG,
    SOA,
    TLSA,
    TXT,
    DnsMessage,
    Flags,
    MalformedMessage,
    MessageTooLarge,
    MixedRRset,
    Name,
    Question,
    ResourceRecord,
    RRType,
    Unknown,
    canonical_rrset_bytes,
    decode_message,
    decode_rdata,
    encode_message,
    frame_tcp,
    unframe_tcp,
)

# Hand-assembled from the RFC 1035 header/question layout before the codec existed.
WWW_QUERY = bytes.fromhex(
    "beef" "0100" "0001" "0000" "0000" "0000"
    "03777777" "0773657276696365" "04636f6e66" "00"
    "0001" "0001"
)


def test_hand_assembled_query_decodes():
    m = decode_message(WWW_QUERY)
    assert m.id == 0xBEEF
    assert m.flags.rd and not m.flags.qr
    assert m.question == Question(Name.from_text("www.service.conf"), RRType.A)
    assert encode_message(m) == WWW_QUERY


def test_query_matches_dnspython():
    ref = dns.message.make_query("www.service.conf.", "A")
    ref.id = 0xBEEF
    assert ref.to_wire() == WWW_QUERY


def test_pointer_cycle_is_malformed():
    msg = bytes.fromhex("0001 0000 0001 0000 0000 0000".replace(" ", "")) + b"\xc0\x0c" + b"\x00\x01\x00\x01"
    with pytest.raises(MalformedMessage):
        decode_message(msg)


@pytest.mark.parametrize("data", [b"", b"\x00" * 11, WWW_QUERY[:-1], WWW_QUERY + b"\x00"])
def test_truncated_or_trailing_input_is_malformed(data):
    with pytest.raises(MalformedMessage):
        decode_message(data)


def test_label_overflow_is_malformed():
    msg = WWW_QUERY[:12] + b"\x40" + b"a" * 64 + b"\x00\x00\x01\x00\x01"
    with pytest.raises(MalformedMessage):
        decode_message(msg)


def test_name_case_insensitive_equality_and_limits():
    assert Name.from_text("WWW.Service.CONF") == Name.from_text("www.service.conf")
    assert hash(Name.from_text("WWW.x")) == hash(Name.from_text("www.X"))
    with pytest.raises(ValueError):
        Name.from_text("a" * 64 + ".conf")
    with pytest.raises(ValueError):
        Name.from_text(".".join(["a" * 63] * 4) + ".x")


def _response(n_answers: int, qname="www.service.conf") -> DnsMessage:
    q = Question(Name.from_text(qname), RRType.A)
    answers = tuple(ResourceRecord(q.name, RRType.A, 300, A(f"10.0.{i // 250}.{i % 250}")) for i in range(n_answers))
    return DnsMessage(9, Flags(qr=True, aa=True), q, answers)


def test_truncation_caps_at_512():
    m = _response(60)
    out = encode_message(m, max_size=512, allow_truncate=True)
    assert len(out) <= 512
    d = decode_message(out)
    assert d.flags.tc and not d.answers and d.question == m.question


def test_no_truncation_when_it_fits():
    m = _response(3)
    d = decode_message(encode_message(m, max_size=512, allow_truncate=True))
    assert not d.flags.tc and d.answers == m.answers


def test_too_large_without_truncation():
    with pytest.raises(MessageTooLarge):
        encode_message(_response(60), max_size=512)


def test_compression_saves_owner_octets():
    m = _response(4)
    name_len = Name.from_text("www.service.conf").wire_length
    saved = len(encode_message(m, compress=False)) - len(encode_message(m))
    assert saved >= 4 * (name_len - 2)


def test_compressed_response_parses_in_dnspython():
    ref = dns.message.from_wire(encode_message(_response(3)))
    assert [r.address for r in ref.answer[0]] == ["10.0.0.0", "10.0.0.1", "10.0.0.2"]


CAA_VALUE = b"letsencrypt.org;validationmethods=dns-01"


def test_caa_round_trip_and_dnspython_agree():
    caa = CAA(0, "issue", CAA_VALUE)
    wire = caa.to_wire()
    assert wire == b"\x00\x05issue" + CAA_VALUE
    assert decode_rdata(RRType.CAA, wire) == caa
    ref = dns.rdata.from_wire(dns.rdataclass.IN, dns.rdatatype.CAA, wire, 0, len(wire))
    assert ref.value == CAA_VALUE and ref.tag == b"issue"


def test_tlsa_layout():
    t = TLSA(3, 1, 0, b"\x30" * 44)
    assert t.to_wire() == b"\x03\x01\x00" + b"\x30" * 44
    assert decode_rdata(RRType.TLSA, t.to_wire()) == t


def test_unknown_type_preserved():
    rr = ResourceRecord(Name.from_text("x.conf"), 4242, 60, Unknown(4242, b"\x01\x02"))
    m = DnsMessage(1, Flags(qr=True), Question(Name.from_text("x.conf"), 4242), (rr,))
    assert decode_message(encode_message(m)) == m


def test_canonical_rrset_layout_single_record():
    owner = Name.from_text("www.service.conf")
    rr = ResourceRecord(owner, RRType.A, 999, A("192.0.2.1"))
    expected = (
        b"\x03www\x07service\x04conf\x00" + b"\x00\x01" + b"\x00\x01" + struct.pack("!I", 300) + b"\x00\x04" + bytes([192, 0, 2, 1])
    )
    assert canonical_rrset_bytes([rr], 300) == expected


def test_canonical_rrset_order_and_case_independent():
    a = ResourceRecord(Name.from_text("WWW.Service.CONF"), RRType.A, 1, A("10.0.0.2"))
    b = ResourceRecord(Name.from_text("www.service.conf"), RRType.A, 1, A("10.0.0.1"))
    lower_a = ResourceRecord(Name.from_text("www.service.conf"), RRType.A, 1, A("10.0.0.2"))
    assert canonical_rrset_bytes([a, b], 60) == canonical_rrset_bytes([b, lower_a], 60)


def test_mixed_rrset_rejected():
    a = ResourceRecord(Name.from_text("a.conf"), RRType.A, 1, A("10.0.0.2"))
    b = ResourceRecord(Name.from_text("b.conf"), RRType.A, 1, A("10.0.0.1"))
    with pytest.raises(MixedRRset):
        canonical_rrset_bytes([a, b], 60)


def test_tcp_framing():
    frames, tail = unframe_tcp(frame_tcp(b"ab") + frame_tcp(b"") + b"\x00\x05ab")
    assert frames == [b"ab", b""] and tail == b"\x00\x05ab"


# -- property tests ---------------------------------------------------------

labels = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-_", min_size=1, max_size=20)
names = st.lists(labels, min_size=0, max_size=5).map(lambda ls: Name.from_text(".".join(ls) or "."))
u8 = st.integers(0, 255)
u16 = st.integers(0, 0xFFFF)
u32 = st.integers(0, 0xFFFFFFFF)

rdatas = st.one_of(
    st.ip_addresses(v=4).map(lambda a: A(str(a))),
    st.ip_addresses(v=6).map(lambda a: AAAA(str(a))),
    names.map(NS),
    st.builds(SOA, names, names, u32, u32, u32, u32, u32),
    st.lists(st.binary(max_size=255), min_size=1, max_size=4).map(lambda s: TXT(tuple(s))),
    st.builds(DS, u16, u8, u8, st.binary(min_size=1, max_size=64)),
    st.builds(DNSKEY, u16, u8, u8, st.binary(min_size=1, max_size=64)),
    st.builds(RRSIG, u16, u8, u8, u32, u32, u32, u16, names, st.binary(min_size=1, max_size=80)),
    st.builds(NSEC3, st.just(1), u8, u16, st.binary(max_size=8), st.binary(min_size=1, max_size=20),
              st.lists(st.sampled_from([1, 2, 6, 16, 28, 46, 48, 52, 257, 65280]), unique=True).map(lambda t: tuple(sorted(t)))),
    st.builds(NSEC3PARAM, st.just(1), u8, u16, st.binary(max_size=8)),
    st.builds(TLSA, u8, u8, u8, st.binary(min_size=1, max_size=64)),
    st.builds(CAA, st.sampled_from([0, 128]), st.sampled_from(["issue", "issuewild", "iodef"]), st.binary(max_size=60)),
    st.binary(max_size=2000).map(ATTEST),
)


@given(rdatas)
def test_rdata_round_trip(rd):
    wire = rd.to_wire()
    back = decode_rdata(rd.rrtype, wire)
    assert back == rd
    assert back.to_wire() == wire


@given(rdatas)
@settings(max_examples=60)
def test_rdata_matches_dnspython_for_standard_types(rd):
    assume(rd.rrtype != RRType.ATTEST)
    assume(not (isinstance(rd, DS) and rd.digest_type == 0))  # reserved; dnspython refuses it
    wire = rd.to_wire(canonical=True)
    ref = dns.rdata.from_wire(dns.rdataclass.IN, rd.rrtype, wire, 0, len(wire))
    assert ref.to_digestable() == wire


messages = st.builds(
    lambda mid, qname, qtype, rr_specs, rd_flag: DnsMessage(
        mid,
        Flags(qr=True, aa=True, rd=rd_flag),
        Question(qname, qtype),
        tuple(ResourceRecord(owner, r.rrtype, ttl, r) for owner, ttl, r in rr_specs),
    ),
    u16,
    names,
    st.sampled_from([1, 28, 65280]),
    st.lists(st.tuples(names, u32, rdatas), max_size=4),
    st.booleans(),
)


@given(messages)
def test_message_round_trip(m):
    wire = encode_message(m)
    assert decode_message(wire) == m
    assert encode_message(decode_message(wire)) == wire


@given(messages)
def test_udp_encoding_never_exceeds_512(m):
    assert len(encode_message(m, max_size=512, allow_truncate=True)) <= 512
