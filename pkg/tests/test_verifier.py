from __future__ import annotations

import copy
import hashlib
import random
from types import SimpleNamespace

import pytest

from adns import verifier
from adns.dnswire import A, DNSKEY, Name, RRType
from adns.harness.scenarios import ADNS_MEASUREMENT, CONF_IP, SERVICE_IP, audit_zone
from adns.keys import SigningKey
from adns.server import AdnsServer
from adns.verifier import (
    Answer,
    TrustStore,
    check_peer_key,
    compute_key_tag,
    ds_digest,
    nsec3_label,
    resolve_bundle,
    start_verify_service,
    verify_instance,
    verify_service,
)

import oracles

WWW = "www.service.conf"


# -- independent primitives vs oracles ---------------------------------------


def test_key_tag_and_ds_match_oracles():
    key = SigningKey(b"\x03" * 32).public
    for flags in (256, 257):
        assert compute_key_tag(flags, 3, 15, key) == oracles.key_tag(oracles.dnskey_rdata(flags, key))
    assert ds_digest(Name.from_text("Service.Conf"), DNSKEY(257, 3, 15, key)) == oracles.ds_sha256("service.conf", 257, key)
    assert nsec3_label(Name.from_text("www.service.conf")) == oracles.nsec3_label("www.service.conf")


def test_trust_store_json_round_trip(l7_world):
    store = l7_world.store(discovery="prompt")
    store.pin("service.conf", b"\x01" * 32)
    back = TrustStore.from_json(store.to_json())
    assert back.to_json() == store.to_json()


# -- chain validation ---------------------------------------------------------


def test_chain_from_root_ds(l7_world):
    res = l7_world.resolver("chain")
    ans = res.query(WWW, RRType.A)
    assert ans.zone == Name.from_text("service.conf")
    assert sorted(r.address for r in ans.rdatas()) == ["10.1.0.1", "10.1.0.2"]
    soa = res.query("conf", RRType.SOA)
    assert soa.records and soa.zone == Name.from_text("conf")


def test_chain_from_pinned_ksk_only(fresh_l7):
    w = fresh_l7
    store = w.store(root=False)
    res = w.resolver("pinned", store)
    with pytest.raises(verifier.MissingChain):
        res.query(WWW, RRType.A)
    verify_instance(res, "service.conf", SERVICE_IP)
    assert store.pinned[Name.from_text("service.conf")] == w.servers["service.conf"].ksk.public
    assert len(res.query(WWW, RRType.A).records) == 2
    with pytest.raises(verifier.MissingChain):
        res.query("conf", RRType.SOA)


def test_nxdomain_and_nodata_are_authenticated(l7_world):
    res = l7_world.resolver("denial")
    nx = res.query("ghost.service.conf", RRType.A)
    assert nx.rcode == 3 and not nx.records
    nodata = res.query(WWW, RRType.TXT)
    assert nodata.rcode == 0 and not nodata.records


def test_expired_and_premature_signatures(fresh_l7):
    w = fresh_l7
    early = verifier.Resolver(w.net, ["10.0.0.1"], w.store(), lambda: w.clock() - 10_000, 1)
    with pytest.raises(verifier.InceptionInFuture):
        early.query(WWW, RRType.A)
    w.clock.advance(172_800 + 600)
    with pytest.raises(verifier.ExpiredSignature):
        w.resolver("late").query(WWW, RRType.A)


@pytest.mark.parametrize("offset", [1, 2, 3, 7, 11, 20, 40, 80])
def test_tampered_response_rejected(fresh_l7, offset):
    w = fresh_l7

    def flip(kind, address, request, response):
        if kind != "tcp" or b"\x00\x01\x00\x01" not in request[-4:]:
            return response
        i = len(response) - offset
        return response[:i] + bytes([response[i] ^ 0x40]) + response[i + 1 :]

    w.net.tamper[SERVICE_IP] = flip
    with pytest.raises(verifier.VerifierError):
        w.resolver(f"tamper{offset}").query(WWW, RRType.A)


def test_wrong_id_is_bogus(fresh_l7):
    w = fresh_l7
    w.net.tamper[SERVICE_IP] = lambda k, a, q, r: bytes([r[0] ^ 1]) + r[1:] if k == "tcp" else r
    with pytest.raises(verifier.BogusResponse):
        w.resolver("id").query(WWW, RRType.A)


# -- service verification -----------------------------------------------------


def test_verify_service_local_policy(l7_world):
    w = l7_world
    v = verify_service(w.resolver("svc"), WWW)
    assert v.policy_source == "local"
    assert sorted(v.addresses) == ["10.1.0.1", "10.1.0.2"]
    fronts = {w.tees[k].x509.public for k in ("front0", "front1")}
    assert set(v.expected_keys) == fronts
    assert v.valid_until > w.clock()
    assert all(c["role"] == "front-end" for c in v.claims)


def test_fragment_fallback_equals_direct(l7_world):
    res = l7_world.resolver("frag")
    direct = resolve_bundle(res, WWW)
    frag = resolve_bundle(res, WWW, use_fragments=True)
    assert frag.used_fragments and not direct.used_fragments
    assert sorted(frag.attest) == sorted(direct.attest)
    v1 = verify_service(res, WWW)
    v2 = verify_service(res, WWW, use_fragments=True)
    assert set(v1.expected_keys) == set(v2.expected_keys)


def test_back_end_policy_rejects_front_end_reports(l7_world):
    w = l7_world
    store = w.store()
    store.local_policies = {Name.from_text(WWW): 'config["role"] == "back-end"'}
    with pytest.raises(verifier.PolicyRejected):
        verify_service(w.resolver("strict", store), WWW)
    store.local_policies = {Name.from_text(WWW): 'claims["nonexistent"] == 1'}
    with pytest.raises(verifier.PolicyRejected):
        verify_service(w.resolver("missing", store), WWW)


def test_discovery_modes(l7_world):
    w = l7_world
    with pytest.raises(verifier.NoLocalPolicy):
        verify_service(w.resolver("off", w.store(local=False)), WWW)
    v = verify_service(w.resolver("tp", w.store("trust-parent", local=False)), WWW)
    assert v.policy_source == "trust-parent" and len(v.expected_keys) == 2
    shown = []
    v = verify_service(w.resolver("prompt", w.store("prompt", local=False)), WWW,
                       approve=lambda text: shown.append(text) or True)
    assert v.policy_source == "prompt" and shown == [v.policy]
    with pytest.raises(verifier.DiscoveryRefused):
        verify_service(w.resolver("deny", w.store("prompt", local=False)), WWW, approve=lambda text: False)


def test_trust_parent_needs_an_attested_delegation(l7_world):
    w = l7_world
    res = w.resolver("tp-conf", w.store("trust-parent", local=False))
    empty = Answer(Name.from_text("_policy.conf"), RRType.TXT, Name.from_text("conf"), 0, (), 300)
    bundle = SimpleNamespace(zone=Name.from_text("conf"), policy=empty)
    # conf is delegated by the unattested root: no ATTEST at the cut
    with pytest.raises(verifier.DiscoveryRefused):
        verifier._select_policy(res.store, Name.from_text("x.conf"), bundle, res, None, w.clock())


def test_tlsa_must_match_attested_keys(fresh_l7):
    w = fresh_l7
    zone = w.servers["service.conf"].zone
    tlsa = zone.snapshot.rrset(Name.from_text(f"_443._https.{WWW}"), RRType.TLSA)
    zone.operator_override(f"_443._https.{WWW}", RRType.TLSA, [tlsa[0].rdata], tlsa[0].ttl, w.tick())
    with pytest.raises(verifier.BindingMismatch):
        verify_service(w.resolver("tlsa"), WWW)


def test_two_phase_interface(l7_world):
    pending = start_verify_service(l7_world.resolver("two-phase"), WWW)
    v = pending.result(timeout=30)
    assert pending.done() and len(v.expected_keys) == 2


def test_check_peer_key(l7_world):
    w = l7_world
    v = verify_service(w.resolver("peer"), WWW)
    now = w.clock()
    assert check_peer_key(v, w.tees["front0"].x509.public, now)
    assert not check_peer_key(v, w.tees["front0"].dane.public, now)
    assert not check_peer_key(v, SigningKey(b"\x44" * 32).public, now)
    with pytest.raises(verifier.Expired):
        check_peer_key(v, w.tees["front0"].x509.public, v.valid_until)


# -- instance verification ----------------------------------------------------


def test_verify_instance_rejects_non_adns_measurement(l7_world):
    w = l7_world
    store = w.store()
    store.adns_policy = 'claims["measurement"] == 0x1'
    with pytest.raises(verifier.PolicyRejected):
        verify_instance(w.resolver("bad-meas", store), "service.conf", SERVICE_IP)
    assert not store.pinned


def test_verify_instance_wrong_zone(l7_world):
    w = l7_world
    with pytest.raises(verifier.BindingMismatch):
        verify_instance(w.resolver("wrong-zone"), "service.conf", CONF_IP)


def test_verify_instance_ksk_mismatch(l7_world):
    w = l7_world
    impostor = AdnsServer(random.Random(9), w.clock, w.snp, ADNS_MEASUREMENT, instance_id="service.conf-0")
    report = impostor.endorsement_report(w.configs["service.conf"])
    res = w.resolver("ksk")
    real = res.transport

    class Swap:
        def __getattr__(self, name):
            return getattr(real, name)

        def rpc(self, address, method, path, body, client_key=None):
            return 200, {"report": report.hex()}

    res.transport = Swap()
    with pytest.raises(verifier.KskMismatch):
        verify_instance(res, "service.conf", SERVICE_IP)


# -- audit ------------------------------------------------------------------


def _audit_inputs(w):
    dump = w.rpc(SERVICE_IP, "GET", "/ledger")
    snap = w.rpc(SERVICE_IP, "GET", "/snapshot")
    return dump, snap


def test_audit_honest_run(l7_world):
    w = l7_world
    verdict = audit_zone(w, "service.conf")
    assert verdict.clean and len(verdict.registrations) == 3
    assert verdict.replay_digest == verdict.snapshot_digest
    # end-to-end soundness: every verified report appears in the ledger
    v = verify_service(w.resolver("sound"), WWW)
    ledger = {r["report_digest"] for r in verdict.registrations}
    assert set(v.report_digests) <= ledger
    assert set(v.report_digests) == {hashlib.sha256(w.tees[k].report_bytes).hexdigest() for k in ("front0", "front1")}


@pytest.mark.parametrize("drop", [1, 4, -1])
def test_audit_detects_removed_entry(l7_world, drop):
    dump, snap = _audit_inputs(l7_world)
    entries = list(dump["entries"])
    del entries[drop]
    verdict = verifier.audit(entries, snap["records"], dump["signed_root"], (), bytes.fromhex(dump["receipt_key"]))
    kinds = {f["finding"] for f in verdict.findings}
    assert "PrefixMismatch" in kinds


def test_audit_detects_extra_record(l7_world):
    dump, snap = _audit_inputs(l7_world)
    records = copy.deepcopy(snap["records"])
    records.append({"owner": "evil.service.conf", "type": int(RRType.A), "ttl": 300, "rdata": A("10.6.6.6").to_wire().hex()})
    verdict = verifier.audit(dump["entries"], records, dump["signed_root"], (), bytes.fromhex(dump["receipt_key"]))
    assert [f["finding"] for f in verdict.findings] == ["ReplayDivergence"]


def test_audit_detects_bad_receipts(l7_world):
    w = l7_world
    dump, snap = _audit_inputs(w)
    r = w.rpc(SERVICE_IP, "GET", "/receipt?seq=2")
    forged = copy.deepcopy(r)
    forged["entry"]["ledger_time"] += 1
    verdict = verifier.audit(dump["entries"], snap["records"], dump["signed_root"],
                             [{"receipt": r["receipt"], "entry": r["entry"]},
                              {"receipt": forged["receipt"], "entry": forged["entry"]}],
                             bytes.fromhex(dump["receipt_key"]))
    assert [f["finding"] for f in verdict.findings] == ["BadReceipt"]
    bad_root = {**dump["signed_root"], "signature": "00" * 64}
    verdict = verifier.audit(dump["entries"], snap["records"], bad_root, (), bytes.fromhex(dump["receipt_key"]))
    assert [f["finding"] for f in verdict.findings] == ["BadRootSignature"]


def test_exit_codes_are_distinct_per_class():
    classes = {
        verifier.BogusSignature: "dnssec", verifier.AttestationFailed: "attest", verifier.PolicyRejected: "policy",
        verifier.Timeout: "net", verifier.AuditDivergence: "audit", verifier.KskMismatch: "ksk",
        verifier.Expired: "expired",
    }
    codes = {verifier.exit_code_for(cls("x")) for cls in classes}
    assert len(codes) == len(classes) and 0 not in codes
