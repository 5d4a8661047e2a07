"""Seeded multi-zone scenarios: bootstrap of an attested island, the L7
sample service, and the trust-matrix attacks.

Every scenario runs against a :class:`World` whose network is either the
in-process :class:`SimNet` or loopback sockets. Time is virtual in both
modes so that ledgers and transcripts are reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path

from .. import attest, verifier
from ..acme import AcmeError, MockCA, key_authorization, monitor_log, sign_body
from ..attest import Origin, SimPlatform
from ..certs import Certificate, Csr
from ..dnswire import A, Name, RRType, TXT
from ..keys import SigningKey
from ..ledger import LedgerEntry, compute_root
from ..policy import ROLE_TABLE_POLICY, PolicyDocument
from ..server import AdnsServer
from ..zone import ZoneConfig
from .simnet import SimNet, SocketNet, VirtualClock
from .tee import BACK_END, FRONT_END, ChannelRefused, RegistrationFailed, SecureChannel, TeeStub, tlsa_admits

T0 = 1_767_225_600
ROOT_IP = "10.0.0.1"
CONF_IP = "10.0.1.1"
SERVICE_IP = "10.0.2.1"
CA_IP = "10.0.9.1"
ROGUE_IP = "10.6.6.6"
CA_NAME = "letsencrypt.org"
CERT_LIFETIME = 90 * 86400

ADNS_MEASUREMENT = attest.digest32(0xAD05)
ADNS_POLICY = 'config["role"] == "adns" && claims["measurement"] == 0xAD05'
SERVICE_DELEGATION_POLICY = 'claims["platform"] == "sim-snp"'

SCENARIOS = ("bootstrap", "l7", "attacks")


class ScenarioFailure(Exception):
    pass


def expect(cond: bool, message: str) -> None:
    if not cond:
        raise ScenarioFailure(message)


class Transcript:
    """Ordered {virtual_time, actor, event} records."""

    def __init__(self, clock):
        self.clock = clock
        self.events: list[dict] = []

    def log(self, actor: str, event: str, **detail) -> None:
        item = {"virtual_time": self.clock(), "actor": actor, "event": event}
        if detail:
            item["detail"] = detail
        self.events.append(item)

    def text(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events)

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.text(), encoding="utf-8")


def _adapter(server: AdnsServer):
    return lambda method, target, body, headers, client_key: server.http(method, target, body, client_key)


def zone_configs(anchors) -> dict[str, ZoneConfig]:
    conf_doc = PolicyDocument("delegation", "conf", ADNS_POLICY)
    service_deleg = PolicyDocument("delegation", "service.conf", SERVICE_DELEGATION_POLICY, conf_doc.child_inheritance())
    return {
        ".": ZoneConfig(".", "intermediate", {}, attested=False, nameserver_addresses=(ROOT_IP,),
                        platform_anchors=anchors),
        "conf": ZoneConfig("conf", "intermediate", {"delegation": conf_doc}, parent_mode="island-apex",
                           nameserver_addresses=(CONF_IP,), platform_anchors=anchors),
        "service.conf": ZoneConfig(
            "service.conf", "leaf",
            {"registration": PolicyDocument("registration", "service.conf", ROLE_TABLE_POLICY),
             "delegation": service_deleg},
            nameserver_addresses=(SERVICE_IP,), platform_anchors=anchors, ca_name=CA_NAME,
        ),
    }


@dataclass
class World:
    seed: int = 0
    real_sockets: bool = False
    ca_name: str = CA_NAME
    clock: VirtualClock = field(init=False)
    net: SimNet | SocketNet = field(init=False)
    transcript: Transcript = field(init=False)
    servers: dict[str, AdnsServer] = field(default_factory=dict)
    tees: dict[str, TeeStub] = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    done: set = field(default_factory=set)
    ca: MockCA | None = None

    def __post_init__(self):
        self.clock = VirtualClock(T0)
        self.net = SocketNet(self.seed) if self.real_sockets else SimNet(self.seed)
        self.transcript = Transcript(self.clock)
        seed_bytes = f"adns-sim:{self.seed}".encode()
        self.sgx = SimPlatform(attest.SIM_SGX, seed_bytes)
        self.snp = SimPlatform(attest.SIM_SNP, seed_bytes)
        self.anchors = (self.sgx.anchor, self.snp.anchor)
        self.configs = zone_configs(self.anchors)

    def rng(self, label: str) -> random.Random:
        return random.Random(f"{self.seed}:{label}")

    def log(self, actor: str, event: str, **detail) -> None:
        self.transcript.log(actor, event, **detail)

    def tick(self, seconds: int = 1) -> int:
        return self.clock.advance(seconds)

    def close(self) -> None:
        self.net.close()

    # -- clients ---------------------------------------------------------

    def root_ds(self):
        return self.servers["."].zone.ds()

    def store(self, discovery: str = "off", local: bool = True, root: bool = True) -> verifier.TrustStore:
        return verifier.TrustStore(
            root_ds=[self.root_ds()] if root else [],
            adns_policy=ADNS_POLICY,
            local_policies={Name.from_text("service.conf"): ROLE_TABLE_POLICY} if local else {},
            platform_anchors=self.anchors,
            discovery=discovery,
        )

    def resolver(self, label: str, store: verifier.TrustStore | None = None) -> verifier.Resolver:
        seed = self.rng(f"resolver:{label}").randrange(1 << 32)
        return verifier.Resolver(self.net, [ROOT_IP], store or self.store(), self.clock, seed)

    def ca_transport(self, method, path, body, headers):
        return self.net.rpc(CA_IP, method, path, body, headers=headers)

    def rpc(self, address: str, method: str, path: str, body=None, key: SigningKey | None = None) -> dict:
        status, resp = self.net.rpc(address, method, path, body, client_key=key)
        if status != 200:
            raise ScenarioFailure(f"{path} at {address}: {status} {resp}")
        return resp

    def add_instance(self, zone: str, address: str, platform: SimPlatform | None) -> AdnsServer:
        server = AdnsServer(
            self.rng(f"adns:{zone}"), self.clock, platform, ADNS_MEASUREMENT,
            instance_id=f"{zone.strip('.') or 'root'}-0", ca=self.ca_transport,
        )
        self.servers[zone] = server
        self.net.add_dns(address, server)
        self.net.add_http(address, _adapter(server), server.tls_key, name=zone)
        self.rpc(address, "POST", "/configure", {"config": self.configs[zone].to_json()})
        self.log(f"adns:{zone}", "configured", ksk=server.ksk.public.hex(), ds=_ds_text(server.zone.ds()))
        return server

    def check_instance(self, actor: str, address: str, zone: str) -> bytes:
        """Host-side endorsement check: returns the attested KSK."""
        body = self.rpc(address, "GET", "/endorsements")
        rep = attest.report_decode(bytes.fromhex(body["report"]))
        claims = attest.verify_report(rep, self.anchors, self.clock(), 86400)
        from ..policy import eval_policy

        expect(eval_policy(ADNS_POLICY, claims, rep.config.as_map()), f"{zone} endorsement fails the aDNS policy")
        expect(rep.config.service.lower() == Name.from_text(zone).lower(), "endorsement names another zone")
        expect(rep.dane_key == bytes.fromhex(body["tls_key"]), "TLS key is not the attested key")
        self.net.expected_keys[address] = rep.dane_key
        self.log(actor, "verified-endorsement", zone=zone, measurement=claims["measurement"])
        return rep.keys_with_usage(attest.KeyUsage.KSK)[0]

    def ledger_digest(self, zone: str) -> str:
        return compute_root(self.servers[zone].ledger.entries).hex()


def _ds_text(ds) -> str:
    return f"{ds.key_tag} {ds.algorithm} {ds.digest_type} {ds.digest.hex()}"


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def scenario_bootstrap(w: World) -> dict:
    """Root (plain) → conf (attested island apex) → service.conf (leaf)."""
    root = w.add_instance(".", ROOT_IP, None)
    w.tick()
    conf = w.add_instance("conf", CONF_IP, w.snp)
    ksk = w.check_instance("operator:root", CONF_IP, "conf")
    root.zone.add_plain_delegation("conf", ksk, [("ns0.conf", CONF_IP)], w.tick())
    w.log("adns:.", "delegated", child="conf")

    ca_key = SigningKey.generate(w.rng("ca-key"))
    w.ca = MockCA(w.ca_name, ca_key, w.resolver("ca"), w.rng("ca"), w.clock)
    w.net.add_http(CA_IP, lambda m, t, b, h, ck: w.ca.handle(m, t, b, h), SigningKey.generate(w.rng("ca-tls")), "ca")
    w.log("ca", "started", name=w.ca_name, public_key=ca_key.public.hex())

    w.tick()
    service = w.add_instance("service.conf", SERVICE_IP, w.snp)
    w.check_instance("adns:service.conf", CONF_IP, "conf")
    body = {"report": service.report.hex(), "glue": [["ns0.service.conf", SERVICE_IP]]}
    resp = w.rpc(CONF_IP, "POST", "/register_delegation", body, key=service.tls_key)
    w.log("adns:conf", "delegated", child="service.conf", seq=resp["seq"])
    w.tick()

    # The parent now publishes NS, DS and ATTEST for the child.
    snap = conf.zone.snapshot
    child = Name.from_text("service.conf")
    for rrtype in (RRType.NS, RRType.DS, RRType.ATTEST):
        expect(bool(snap.rrset(child, rrtype)), f"conf lacks {RRType.label(rrtype)} for service.conf")

    # Tampered inheritance list is refused.
    bad_doc = PolicyDocument("delegation", "rogue.conf", "true", (("conf", "true"),))
    rogue = AdnsServer(w.rng("adns:rogue"), w.clock, w.snp, ADNS_MEASUREMENT, instance_id="rogue-0")
    rogue_cfg = ZoneConfig("rogue.conf", "leaf", {"delegation": bad_doc}, platform_anchors=w.anchors)
    raw = rogue.endorsement_report(rogue_cfg)
    status, err = w.net.rpc(CONF_IP, "POST", "/register_delegation",
                            {"report": raw.hex(), "glue": [["ns0.rogue.conf", "10.0.3.1"]]}, client_key=rogue.tls_key)
    expect(status != 200 and err["code"] == "InheritanceViolation", f"tampered inheritance accepted: {err}")
    w.log("adns:conf", "rejected-delegation", child="rogue.conf", code=err["code"])

    # Chain check from the root anchor down to the child apex.
    res = w.resolver("bootstrap-check")
    ans = res.query("service.conf", RRType.SOA)
    expect(bool(ans.records), "service.conf SOA did not validate")
    w.log("client", "validated", name="service.conf", rrtype="SOA")
    w.done.add("bootstrap")
    out = {z: w.ledger_digest(z) for z in (".", "conf", "service.conf")}
    w.results["bootstrap"] = {"ledger_digests": out}
    return w.results["bootstrap"]


def scenario_l7(w: World) -> dict:
    if "bootstrap" not in w.done:
        scenario_bootstrap(w)
    www = "www.service.conf"
    rng = w.rng("tees")
    for i in range(2):
        role, meas, host = FRONT_END
        w.tees[f"front{i}"] = TeeStub(w.sgx, "service.conf", f"node{i}.front-end", role, meas, host,
                                      f"10.1.0.{i + 1}", rng, (Origin("www", "https", 443, 1),))
    role, meas, host = BACK_END
    w.tees["back0"] = TeeStub(w.snp, "service.conf", "node0.back-end", role, meas, host, "10.2.0.1", rng)

    for label, tee in w.tees.items():
        tee.check_endorsement(w.net, SERVICE_IP, w.anchors, ADNS_POLICY, w.clock())
        resp = tee.register(w.net, SERVICE_IP, w.tick())
        w.log(f"tee:{tee.tee_name}", "registered", seq=resp["seq"], dane_key=tee.dane.public.hex())

    for i in range(2):
        tee = w.tees[f"front{i}"]
        cert = tee.request_certificate(w.net, SERVICE_IP, [www], w.tick(), CERT_LIFETIME)
        w.log(f"tee:{tee.tee_name}", "certificate", serial=cert.serial, ct_index=cert.ct_index)

    # Back-end admits only front-end names whose TLSA pins the channel key.
    back = w.tees["back0"]
    back.admit = tlsa_admits(w.resolver("back-end"), "front-end.service.conf")
    fe_resolver = w.resolver("front-end")

    def forward(fe: TeeStub, data: bytes) -> bytes:
        pinned = fe_resolver.query(back.tee_name, RRType.TLSA).rdatas()
        channel = SecureChannel.open(str(fe.tee_name), fe.dane, back, attest.KeyUsage.DANE)
        from ..keys import spki_der

        expect(any(r.association == spki_der(channel.server_key) for r in pinned), "back-end key not in TLSA")
        return b"[" + str(fe.tee_name).encode() + b"] " + channel.request(data)

    by_address = {}
    for i in range(2):
        fe = w.tees[f"front{i}"]
        fe.forward = forward
        by_address[fe.address] = fe
    w.tick()

    client = w.resolver("client")
    v = verifier.verify_service(client, www)
    expect(len(v.addresses) == 2 and len(v.expected_keys) == 2, f"unexpected bundle {v.addresses}")
    w.log("client", "verified", name=www, addresses=sorted(v.addresses), keys=len(v.expected_keys),
          valid_until=v.valid_until, policy_source=v.policy_source)
    target = by_address[sorted(v.addresses)[0]]
    client_key = SigningKey.generate(w.rng("client-key"))
    channel = SecureChannel.open("client", client_key, target, attest.KeyUsage.X509)
    expect(verifier.check_peer_key(v, channel.server_key, w.clock()), "front-end key is not attested")
    reply = channel.request(b"ping")
    w.log("client", "round-trip", via=str(target.tee_name), reply=reply.decode())

    stranger = SigningKey.generate(w.rng("stranger"))
    try:
        SecureChannel.open("node9.front-end.service.conf", stranger, back, attest.KeyUsage.DANE)
        raise ScenarioFailure("back-end admitted a stranger")
    except ChannelRefused:
        w.log("tee:node0.back-end.service.conf", "refused-stranger")

    fe_certs = sorted((c for k in ("front0", "front1") for c in w.tees[k].certificates), key=lambda c: c.serial)
    expect(sorted(w.ca.certificates) == [c.serial for c in fe_certs], "CA issued unexpected certificates")
    expect(not monitor_log(w.ca.log_json(), fe_certs, w.ca.public_key), "front-end certificate not logged")

    verdict = audit_zone(w, "service.conf")
    expect(verdict.clean, f"audit findings: {verdict.findings}")
    expect(len(verdict.registrations) == 3, "expected three registrations")
    ledger_reports = {r["report_digest"] for r in verdict.registrations}
    expect(set(v.report_digests) <= ledger_reports, "verified report missing from ledger")
    w.log("auditor", "clean", zone="service.conf", registrations=len(verdict.registrations),
          digest=verdict.replay_digest)
    w.done.add("l7")
    w.results["l7"] = {
        "verified": v.to_json(),
        "reply": reply.decode(),
        "ledger_digests": {z: w.ledger_digest(z) for z in w.servers},
        "ca_certificates": [c.serial for c in fe_certs],
        "verdict": verdict.to_json(),
    }
    return w.results["l7"]


def audit_zone(w: World, zone: str, address: str | None = None) -> verifier.AuditVerdict:
    address = address or {"service.conf": SERVICE_IP, "conf": CONF_IP, ".": ROOT_IP}[zone]
    dump = w.rpc(address, "GET", "/ledger")
    snap = w.rpc(address, "GET", "/snapshot")
    n = len(dump["entries"])
    receipts = []
    for seq in sorted({0, n // 2, n - 1}):
        r = w.rpc(address, "GET", f"/receipt?seq={seq}")
        receipts.append({"receipt": r["receipt"], "entry": r["entry"]})
    return verifier.audit(dump["entries"], snap["records"], dump["signed_root"], receipts,
                          bytes.fromhex(dump["receipt_key"]))


def _rogue_certificate(w: World, rogue_key: SigningKey, name: str) -> Certificate:
    """The operator of the host answers dns-01 itself by overriding the
    served challenge TXT, outside the TEE and without a ledger entry."""
    zone = w.servers["service.conf"].zone
    account_key = SigningKey.generate(w.rng("rogue-account"))

    def post(path, body):
        status, resp = w.ca_transport("POST", path, body, sign_body(account_key, body))
        expect(status == 200, f"rogue {path}: {resp}")
        return resp

    account = post("/new-account", {"public_key": account_key.public.hex()})["account"]
    now = w.clock()
    order = post("/new-order", {"account": account, "names": [name], "not_before": now, "not_after": now + CERT_LIFETIME})
    token = order["challenges"][name]
    zone.operator_override(f"_acme-challenge.{name}", RRType.TXT,
                           [TXT.from_text_chunks(key_authorization(token, account_key.public))], 300, now)
    state = post("/challenge-ready", {"account": account, "order": order["order"]})
    expect(state["status"] == "ready", f"rogue order not ready: {state}")
    csr = Csr.create(rogue_key, [name], now, now + CERT_LIFETIME)
    done = post("/finalize", {"account": account, "order": order["order"], "csr": csr.to_bytes().hex()})
    status, fetched = w.ca_transport("GET", f"/certificate/{done['certificate']}", None, {})
    return Certificate.from_bytes(bytes.fromhex(fetched["certificate"]))


def _x509_client_accepts(cert: Certificate, ca_public: bytes, name: str, presented: bytes, now: int) -> bool:
    return (
        cert.verify(ca_public)
        and name in cert.names
        and cert.public_key == presented
        and cert.not_before <= now < cert.not_after
    )


def scenario_attacks(w: World) -> dict:
    if "l7" not in w.done:
        scenario_l7(w)
    www = "www.service.conf"
    findings: dict[str, dict] = {}
    service = w.servers["service.conf"]
    zone = service.zone

    # (a) rogue operator swaps the served A record.
    rogue_key = SigningKey.generate(w.rng("rogue-host"))
    now = w.tick()
    zone.operator_override(www, RRType.A, [A(ROGUE_IP)], zone.config.attest_ttl, now)
    rogue_cert = _rogue_certificate(w, rogue_key, www)
    w.log("operator", "override", name=www, address=ROGUE_IP)
    verdict = audit_zone(w, "service.conf")
    divergent = any(f["finding"] == "ReplayDivergence" for f in verdict.findings)
    expect(divergent, "audit missed the swapped record")
    adns_row = {"detected": True, "exit_code": verifier.exit_code_for(verifier.AuditDivergence("swap")),
                "findings": [f["finding"] for f in verdict.findings]}
    dane_res = w.resolver("dane-client")
    addresses = [r.address for r in dane_res.query(www, RRType.A).rdatas()]
    pinned = {r.association for r in dane_res.query(f"_443._https.{www}", RRType.TLSA).rdatas() if r.usage == 3}
    from ..keys import spki_der

    dane_accepts = ROGUE_IP in addresses and spki_der(rogue_key.public) in pinned
    x509_accepts = _x509_client_accepts(rogue_cert, w.ca.public_key, www, rogue_key.public, w.clock())
    ct_foreign = _foreign_issuance(w, "service.conf")
    findings["a"] = {
        "adns_client": adns_row,
        "dane_client": {"connected": dane_accepts, "reason": None if dane_accepts else "TlsaMismatch"},
        "x509_only_client": {"connected": x509_accepts, "exposure": "certificate issued from overridden challenge"},
        "ct_monitor": ct_foreign,
    }
    expect(not dane_accepts and x509_accepts, "attack (a) outcome differs from the trust matrix")
    w.log("attack-a", "outcome", adns="AuditDivergence", dane="TlsaMismatch", x509="connected",
          ct=[f["finding"] for f in ct_foreign])
    zone.clear_overrides(w.tick())

    # (b) rogue CA mis-issues without logging.
    now = w.tick()
    unlogged = w.ca.rogue_issue(rogue_key.public, [www], now, now + CERT_LIFETIME)
    ct = monitor_log(w.ca.log_json(), [unlogged], w.ca.public_key)
    expect([f["finding"] for f in ct] == ["UnloggedCertificate"], f"CT monitor missed the rogue certificate: {ct}")
    findings["b"] = {"ct_monitor": ct}
    w.log("attack-b", "outcome", findings=[f["finding"] for f in ct])

    # (c) stale report replay.
    role, meas, host = FRONT_END
    late = TeeStub(w.sgx, "service.conf", "node2.front-end", role, meas, host, "10.1.0.3", w.rng("late-tee"),
                   (Origin("www", "https", 443, 1),))
    stale = late.report(w.clock())
    w.tick(zone.config.max_report_age + 1)
    try:
        late.register(w.net, SERVICE_IP, w.clock(), report=stale)
        raise ScenarioFailure("stale report was accepted")
    except RegistrationFailed as exc:
        expect(exc.code == "StaleReport", f"unexpected rejection {exc.code}")
        findings["c"] = {"code": exc.code, "status": exc.status}
    w.log("attack-c", "outcome", code=findings["c"]["code"])

    # (d) an on-path adversary corrupts RRSIGs from the service zone.
    w.net.tamper[SERVICE_IP] = _flip_rrsig
    rows = {}
    for row, fn in (
        ("adns_client", lambda: verifier.verify_service(w.resolver("tamper-adns"), www)),
        ("dane_client", lambda: w.resolver("tamper-dane").query(f"_443._https.{www}", RRType.TLSA)),
    ):
        try:
            fn()
            rows[row] = {"rejected": False}
        except verifier.VerifierError as exc:
            rows[row] = {"rejected": True, "code": exc.code}
    legacy = w.resolver("legacy").exchange(SERVICE_IP, Name.from_text(www), RRType.A)
    rows["legacy_client"] = {"rejected": False, "addresses": [rr.rdata.address for rr in legacy.answers if rr.rrtype == RRType.A]}
    del w.net.tamper[SERVICE_IP]
    expect(all(rows[r].get("code") == "BogusSignature" for r in ("adns_client", "dane_client")),
           f"tampered RRSIG not rejected: {rows}")
    findings["d"] = rows
    w.log("attack-d", "outcome", **{k: v.get("code", "accepted") for k, v in rows.items()})

    w.done.add("attacks")
    w.results["attacks"] = {"findings": findings, "ledger_digests": {z: w.ledger_digest(z) for z in w.servers}}
    return w.results["attacks"]


def _foreign_issuance(w: World, zone_name: str) -> list[dict]:
    """CT entries for names in the zone that the zone's ledger never logged."""
    data = w.servers[zone_name].zone.data
    ours = {c.ct_index for certs in data.certificates.values() for c in certs}
    origin = Name.from_text(zone_name).lower()
    out = []
    for e in w.ca.log_json()["entries"]:
        p = e["payload"]
        if p.get("event") != "csr" or e["seq"] in ours:
            continue
        if any(Name.from_text(n).lower().is_subdomain_of(origin) for n in p["names"]):
            out.append({"finding": "ForeignIssuance", "ct_index": e["seq"], "names": p["names"]})
    return out


def _flip_rrsig(kind: str, address: str, request: bytes, response: bytes) -> bytes:
    """Flip the last octet of the message, which for signed answers lies
    inside the final RRSIG's signature."""
    if kind != "tcp" or len(response) <= 12:
        return response
    return response[:-1] + bytes([response[-1] ^ 0x01])


RUNNERS = {"bootstrap": scenario_bootstrap, "l7": scenario_l7, "attacks": scenario_attacks}


def run(names, seed: int = 0, real_sockets: bool = False, out_dir: str | os.PathLike | None = None) -> World:
    world = World(seed, real_sockets)
    try:
        for name in names:
            RUNNERS[name](world)
        world.log("runner", "finished", scenarios=list(names),
                  ledger_digests={z: world.ledger_digest(z) for z in sorted(world.servers)})
        if out_dir is not None:
            write_outputs(world, out_dir)
    finally:
        world.close()
    return world


def write_outputs(world: World, out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world.transcript.write(out / "transcript.jsonl")
    for zone, server in world.servers.items():
        label = zone.strip(".") or "root"
        (out / f"ledger-{label}.json").write_text(json.dumps(server.ledger.dump(), sort_keys=True, indent=1) + "\n")
        (out / f"snapshot-{label}.json").write_text(json.dumps(server.zone.snapshot_json(), sort_keys=True, indent=1) + "\n")
        (out / f"zone-{label}.json").write_text(json.dumps(world.configs[zone].to_json(), sort_keys=True, indent=1) + "\n")
    if world.ca is not None:
        (out / "ct-log.json").write_text(json.dumps(world.ca.log_json(), sort_keys=True, indent=1) + "\n")
    (out / "results.json").write_text(json.dumps(world.results, sort_keys=True, indent=1, default=str) + "\n")
