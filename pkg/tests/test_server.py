from __future__ import annotations

import base64
import hashlib
import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adns import attest
from adns.dnswire import (
    ATTEST,
    DnsMessage,
    Flags,
    Name,
    Question,
    RCode,
    RRType,
    decode_message,
    encode_message,
    frame_tcp,
    unframe_tcp,
)
from adns.attest import Origin
from adns.harness.scenarios import CONF_IP, SERVICE_IP, World, scenario_l7
from adns.harness.tee import FRONT_END, TeeStub
from adns.keys import SigningKey
from adns.policy import ROLE_TABLE_POLICY, parse_policy
from adns.server import AdnsServer, verify_eat

FIXTURES = Path(__file__).parent / "fixtures" / "rpc_golden.json"
WWW = "www.service.conf"


def query(name, qtype, qid=0x1234, opcode=0, qr=False):
    return DnsMessage(qid, Flags(qr=qr, opcode=opcode), Question(Name.from_text(name), qtype))


def tcp_answer(server, name, qtype, qid=7):
    out = server.tcp(frame_tcp(encode_message(query(name, qtype, qid))))
    frames, tail = unframe_tcp(out)
    assert len(frames) == 1 and tail == b""
    return decode_message(frames[0])


# -- UDP ---------------------------------------------------------------------


def test_udp_always_truncates(l7_world):
    server = l7_world.servers["service.conf"]
    for name, qtype in [(WWW, RRType.A), (f"_443._https.{WWW}", RRType.ATTEST), ("service.conf", RRType.DNSKEY)]:
        wire = encode_message(query(name, qtype, 0xBEEF))
        raw = server.udp(wire)
        msg = decode_message(raw)
        assert len(raw) <= 512 and msg.flags.tc and msg.flags.qr
        assert msg.id == 0xBEEF and msg.question == query(name, qtype).question
        assert not (msg.answers or msg.authority or msg.additional)
        assert raw[12:] == wire[12:]


def test_udp_formerr(l7_world):
    server = l7_world.servers["service.conf"]
    msg = decode_message(server.udp(b"\xab\xcd\x00"))
    assert msg.id == 0xABCD and msg.flags.rcode == RCode.FORMERR
    answered = encode_message(query(WWW, RRType.A, qr=True))
    assert decode_message(server.udp(answered)).flags.rcode == RCode.FORMERR
    assert server.udp(b"\x01") == b""


# -- TCP ---------------------------------------------------------------------


def test_tcp_attest_answer(l7_world):
    server = l7_world.servers["service.conf"]
    msg = tcp_answer(server, f"_443._https.{WWW}", RRType.ATTEST)
    assert msg.flags.aa and msg.flags.rcode == RCode.NOERROR
    attests = [rr for rr in msg.answers if rr.rrtype == RRType.ATTEST]
    sigs = [rr for rr in msg.answers if rr.rrtype == RRType.RRSIG]
    assert len(attests) == 2 and len(sigs) == 1
    fronts = {l7_world.tees[k].report_bytes for k in ("front0", "front1")}
    assert all(isinstance(rr.rdata, ATTEST) for rr in attests)
    assert {rr.rdata.data for rr in attests} == fronts


def test_tcp_policy_txt(l7_world):
    server = l7_world.servers["service.conf"]
    msg = tcp_answer(server, "_policy.service.conf", RRType.TXT)
    txt = [rr.rdata for rr in msg.answers if rr.rrtype == RRType.TXT]
    assert len(txt) == 1
    assert parse_policy(txt[0].joined().decode()) == parse_policy(ROLE_TABLE_POLICY)


def test_tcp_pipelined_in_order(l7_world):
    server = l7_world.servers["service.conf"]
    a = encode_message(query(WWW, RRType.A, 1))
    b = encode_message(query("service.conf", RRType.SOA, 2))
    frames, tail = unframe_tcp(server.tcp(frame_tcp(a) + frame_tcp(b)))
    assert tail == b"" and [decode_message(f).id for f in frames] == [1, 2]


def test_tcp_framing_violations(l7_world):
    server = l7_world.servers["service.conf"]
    good = frame_tcp(encode_message(query(WWW, RRType.A)))
    with pytest.raises(ConnectionError):
        server.tcp(good + b"\x00\x20\x01")
    with pytest.raises(ConnectionError):
        server.tcp(frame_tcp(b"\x00\x01\x02"))


def test_tcp_rcodes(l7_world):
    server = l7_world.servers["service.conf"]
    notimp = server.answer(query(WWW, RRType.A, opcode=2))
    assert notimp.flags.rcode == RCode.NOTIMP
    refused = server.answer(query("example.org", RRType.A))
    assert refused.flags.rcode == RCode.REFUSED
    blank = AdnsServer(random.Random(1), lambda: 0)
    assert blank.answer(query(WWW, RRType.A)).flags.rcode == RCode.REFUSED
    assert server.answer(query(WWW, RRType.A, qr=True)).flags.rcode == RCode.FORMERR


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([WWW, "node0.back-end.service.conf", "nope.service.conf", "service.conf",
                        f"_443._https.{WWW}", "_policy.service.conf", "_0._attest.node0.front-end.service.conf"]),
       st.sampled_from([RRType.A, RRType.AAAA, RRType.TXT, RRType.ATTEST, RRType.TLSA, RRType.SOA, RRType.DNSKEY]),
       st.integers(0, 0xFFFF))
def test_udp_and_tcp_agree_on_question(l7_world, name, qtype, qid):
    server = l7_world.servers["service.conf"]
    wire = encode_message(query(name, qtype, qid))
    udp = server.udp(wire)
    assert len(udp) <= 512 and decode_message(udp).flags.tc
    frames, _ = unframe_tcp(server.tcp(frame_tcp(wire)))
    assert frames[0][:2] == udp[:2] and frames[0][12 : len(wire)] == wire[12:]


# -- RPC ---------------------------------------------------------------------


def test_configure_once(fresh_l7):
    w = fresh_l7
    cfg = w.configs["service.conf"].to_json()
    status, body = w.net.rpc(SERVICE_IP, "POST", "/configure", {"config": cfg})
    assert status == 409 and body["code"] == "AlreadyConfigured"


def test_mutations_need_a_channel_key(fresh_l7):
    w = fresh_l7
    tee = w.tees["front0"]
    status, body = w.net.rpc(SERVICE_IP, "POST", "/register_service",
                             {"report": tee.report(w.clock()).hex(), "address": tee.address})
    assert status == 401 and body["code"] == "Unauthenticated"
    status, body = w.net.rpc(SERVICE_IP, "POST", "/get_certificate", {"csr": "00"})
    assert status == 401


def test_endpoint_errors(fresh_l7):
    w = fresh_l7
    assert w.net.rpc(SERVICE_IP, "GET", "/nope", None)[0] == 404
    status, body = w.net.rpc(SERVICE_IP, "POST", "/register_service", {}, client_key=SigningKey(b"\x01" * 32))
    assert status == 400 and body["code"] == "Malformed"
    blank = AdnsServer(random.Random(1), lambda: 0)
    assert blank.http("GET", "/ledger", None)[1]["code"] == "NotConfigured"


def test_endorsements_describe_the_instance(l7_world):
    w = l7_world
    status, body = w.net.rpc(SERVICE_IP, "GET", "/endorsements", None)
    assert status == 200
    rep = attest.report_decode(bytes.fromhex(body["report"]))
    assert Name.from_text(rep.config.service) == Name.from_text("service.conf")
    assert rep.dane_key.hex() == body["tls_key"]
    assert rep.keys_with_usage(attest.KeyUsage.KSK)[0].hex() == body["ksk"]
    assert body["receipt_key"] == w.servers["service.conf"].ledger.receipt_public_key.hex()


def test_registration_is_logged_before_it_is_served(fresh_l7):
    w = fresh_l7
    server = w.servers["service.conf"]
    seen = []
    original = server.ledger.record

    def spy(*args):
        # at append time nothing from this entry is visible yet
        seen.append(tcp_answer(server, "node5.front-end.service.conf", RRType.A).answers)
        return original(*args)

    server.ledger.record = spy
    role, meas, host = FRONT_END
    tee = TeeStub(w.sgx, "service.conf", "node5.front-end", role, meas, host, "10.1.0.9", random.Random(5),
                  (Origin("www", "https", 443, 1),))
    resp = tee.register(w.net, SERVICE_IP, w.tick())
    del server.ledger.record
    assert seen == [()]
    assert resp["seq"] == len(server.ledger.entries) - 1
    answer = tcp_answer(server, "node5.front-end.service.conf", RRType.A)
    assert [rr.rdata.address for rr in answer.answers if rr.rrtype == RRType.A] == ["10.1.0.9"]


def test_resign_and_refresh_triggers(fresh_l7):
    w = fresh_l7
    before = len(w.servers["service.conf"].ledger.entries)
    status, body = w.net.rpc(SERVICE_IP, "POST", "/resign", None)
    assert status == 200 and body["seq"] == before
    status, body = w.net.rpc(SERVICE_IP, "POST", "/acme_refresh", None)
    assert status == 200 and body == {"renewed": []}


# -- golden request/response fixtures ----------------------------------------

GOLDEN_PATHS = ["/configure", "/endorsements", "/register_delegation", "/register_service", "/get_certificate",
                "/ledger", "/snapshot", "/receipt"]


def capture_rpc() -> dict:
    """First exchange per endpoint during a seed-0 L7 run, plus error bodies."""
    w = World(seed=0)
    seen: dict = {}
    inner = w.net.rpc

    def recording(address, method, path, body, client_key=None, headers=None):
        status, resp = inner(address, method, path, body, client_key=client_key, headers=headers)
        key = path.split("?")[0]
        if address != "10.0.9.1" and key not in seen:
            seen[key] = {"request": {"method": method, "path": path, "body": body},
                         "response": {"status": status, "body": resp}}
        return status, resp

    w.net.rpc = recording
    scenario_l7(w)
    w.rpc(SERVICE_IP, "GET", "/ds")
    golden = {p: seen[p] for p in GOLDEN_PATHS + ["/ds"]}
    for p in ("/ledger", "/snapshot"):
        # bodies are large; freeze their shape and digest
        b = golden[p]["response"]["body"]
        golden[p]["response"]["body"] = {"keys": sorted(b), "sha256": _digest(b)}
    status, err = w.net.rpc(CONF_IP, "POST", "/configure", {"config": w.configs["conf"].to_json()})
    golden["error:AlreadyConfigured"] = {"response": {"status": status, "body": err}}
    return golden


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def test_rpc_golden_fixtures():
    golden = json.loads(FIXTURES.read_text())
    assert capture_rpc() == golden


def test_golden_field_names():
    golden = json.loads(FIXTURES.read_text())
    assert set(golden["/register_service"]["request"]["body"]) == {"report", "address"}
    assert set(golden["/register_service"]["response"]["body"]) == {"seq", "receipt"}
    assert set(golden["/get_certificate"]["response"]["body"]) == {"certificate", "serial"}
    assert set(golden["/endorsements"]["response"]["body"]) == {"report", "ksk", "tls_key", "receipt_key"}
    assert set(golden["/register_delegation"]["request"]["body"]) == {"report", "glue"}
    assert set(golden["error:AlreadyConfigured"]["response"]["body"]) == {"code", "message"}


# -- EAT ---------------------------------------------------------------------


def eat(w, path, method="GET"):
    status, body = w.net.rpc(SERVICE_IP, method, path, None)
    return status, body


def test_eat_discovery_document(l7_world):
    status, cfg = eat(l7_world, "/common/v2.0/.well-known/openid-configuration")
    assert status == 200
    for k in ("jwks_uri", "token_endpoint", "create_signing_key_endpoint"):
        assert cfg[k].startswith("https://service.conf/")


def test_eat_token_claims(fresh_l7):
    w = fresh_l7
    status, body = eat(w, f"/common/oauth2/v2.0/token?service={WWW}")
    assert status == 200
    keys = eat(w, "/common/discovery/v2.0/keys")[1]
    payload = verify_eat(body["token"], keys)
    assert payload["measurement"] == "0xFEEDFACE"
    assert payload["iss"] == "service.conf" and payload["sub"] == WWW
    assert payload["exp"] <= payload["iat"] + w.servers["service.conf"].zone.config.attest_ttl


def test_eat_key_rotation(fresh_l7):
    w = fresh_l7
    old = eat(w, f"/common/oauth2/v2.0/token?service={WWW}")[1]["token"]
    kid = eat(w, "/create-signing-key", "POST")[1]["kid"]
    keys = eat(w, "/common/discovery/v2.0/keys")[1]
    assert len(keys["keys"]) == 2
    new = eat(w, f"/common/oauth2/v2.0/token?service={WWW}")[1]["token"]
    assert json.loads(_b64(new.split(".")[0]))["kid"] == kid
    verify_eat(old, keys)
    verify_eat(new, keys)
    forged = new[:-2] + ("AA" if new[-2:] != "AA" else "BB")
    with pytest.raises(ValueError):
        verify_eat(forged, keys)


def _b64(text):
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


def test_eat_errors(fresh_l7):
    w = fresh_l7
    status, body = eat(w, "/common/oauth2/v2.0/token?service=ghost.service.conf")
    assert status == 404 and body["code"] == "NoSuchService"
    w.clock.advance(w.servers["service.conf"].zone.config.registration_lifetime + 1)
    status, body = eat(w, f"/common/oauth2/v2.0/token?service={WWW}")
    assert status == 404 and body["code"] == "NoFreshAttestation"


if __name__ == "__main__":
    FIXTURES.parent.mkdir(exist_ok=True)
    FIXTURES.write_text(json.dumps(capture_rpc(), indent=1, sort_keys=True) + "\n")
