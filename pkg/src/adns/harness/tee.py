"""Simulated confidential-service TEEs and the mutually authenticated
channel they talk over."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from .. import attest
from ..attest import AttestedKey, KeyUsage, Origin, ServiceConfig, SimPlatform
from ..certs import Certificate, Csr
from ..dnswire import Name, RRType
from ..keys import SigningKey, spki_der
from ..policy import eval_policy
from ..zone import update_key_proof

FRONT_END = ("front-end", attest.digest32(0xFEEDFACE), attest.digest32(0xDEADC0DE))
BACK_END = ("back-end", attest.digest32(0x8BADF00D), attest.digest32(0xBAADF00D))


class ChannelRefused(Exception):
    code = "ChannelRefused"


class RegistrationFailed(Exception):
    def __init__(self, status: int, body: dict):
        super().__init__(f"{status} {body.get('code')}: {body.get('message')}")
        self.status = status
        self.code = body.get("code", "Error")


@dataclass
class SecureChannel:
    """Both ends present (name, public key) at open; either side may
    refuse. Integrity is assumed inside the simulation."""

    client_name: str
    client_key: bytes
    server_name: str
    server_key: bytes
    _server: "TeeStub"

    @classmethod
    def open(cls, client_name: str, client_key: SigningKey, server: "TeeStub", usage: KeyUsage) -> "SecureChannel":
        server_key = server.key_for(usage).public
        server.accept(client_name, client_key.public)
        return cls(client_name, client_key.public, str(server.tee_name), server_key, server)

    def request(self, data: bytes) -> bytes:
        return self._server.serve(self, data)


@dataclass
class TeeStub:
    """A TEE following the registration protocol: fresh keys, verify the
    aDNS endorsement, then register over an authenticated channel."""

    platform: SimPlatform
    zone: str
    prefix: str
    role: str
    measurement: bytes
    hostdata: bytes
    address: str
    rng: random.Random
    origins: tuple[Origin, ...] = ()
    instance_id: str = ""
    dane: SigningKey = field(init=False)
    x509: SigningKey = field(init=False)
    registered: bool = False
    certificates: list[Certificate] = field(default_factory=list)
    report_bytes: bytes | None = None
    # acceptance check for incoming channels: (peer name, peer key) -> bool
    admit: Callable[[str, bytes], bool] | None = None
    forward: Callable[["TeeStub", bytes], bytes] | None = None
    echo_body: bytes = b"hello from "

    def __post_init__(self):
        self.dane = SigningKey.generate(self.rng)
        self.x509 = SigningKey.generate(self.rng)
        self.instance_id = self.instance_id or self.prefix

    @property
    def tee_name(self) -> Name:
        return Name.from_text(f"{self.prefix}.{self.zone}").lower()

    def key_for(self, usage: KeyUsage) -> SigningKey:
        return self.x509 if usage == KeyUsage.X509 else self.dane

    def config(self) -> ServiceConfig:
        return ServiceConfig(self.zone, self.instance_id, self.prefix, self.role, self.origins)

    def report(self, now: int) -> bytes:
        keys = [AttestedKey(KeyUsage.DANE, self.dane.public), AttestedKey(KeyUsage.X509, self.x509.public)]
        rep = self.platform.issue_report(self.measurement, self.hostdata, self.config(), keys, now)
        self.report_bytes = attest.report_encode(rep)
        return self.report_bytes

    def check_endorsement(self, net, rpc_address: str, anchors, adns_policy: str, now: int) -> dict:
        """Fetch /endorsements, verify the instance, pin its TLS key."""
        status, body = net.rpc(rpc_address, "GET", "/endorsements", None)
        if status != 200:
            raise RegistrationFailed(status, body)
        rep = attest.report_decode(bytes.fromhex(body["report"]))
        claims = attest.verify_report(rep, anchors, now, 86400)
        if not eval_policy(adns_policy, claims, rep.config.as_map()):
            raise RegistrationFailed(403, {"code": "PolicyRejected", "message": "aDNS instance rejected"})
        if rep.dane_key != bytes.fromhex(body["tls_key"]):
            raise RegistrationFailed(403, {"code": "BindingMismatch", "message": "TLS key is not attested"})
        net.expected_keys[rpc_address] = rep.dane_key
        return claims

    def register(self, net, rpc_address: str, now: int, report: bytes | None = None, update: bool = False,
                 new_dane: SigningKey | None = None) -> dict:
        raw = report if report is not None else self.report(now)
        body = {"report": raw.hex(), "address": self.address}
        if update:
            body["update"] = True
            if new_dane is not None:
                body["key_proof"] = update_key_proof(new_dane, raw).hex()
        status, resp = net.rpc(rpc_address, "POST", "/register_service", body, client_key=self.dane)
        if status != 200:
            raise RegistrationFailed(status, resp)
        self.registered = True
        return resp

    def rotate_dane(self, net, rpc_address: str, now: int) -> dict:
        old, self.dane = self.dane, SigningKey.generate(self.rng)
        raw = self.report(now)
        body = {"report": raw.hex(), "address": self.address, "update": True,
                "key_proof": update_key_proof(self.dane, raw).hex()}
        status, resp = net.rpc(rpc_address, "POST", "/register_service", body, client_key=old)
        if status != 200:
            self.dane = old
            raise RegistrationFailed(status, resp)
        return resp

    def request_certificate(self, net, rpc_address: str, names, not_before: int, lifetime: int) -> Certificate:
        csr = Csr.create(self.x509, names, not_before, not_before + lifetime)
        status, resp = net.rpc(rpc_address, "POST", "/get_certificate", {"csr": csr.to_bytes().hex()},
                               client_key=self.dane)
        if status != 200:
            raise RegistrationFailed(status, resp)
        cert = Certificate.from_bytes(bytes.fromhex(resp["certificate"]))
        self.certificates.append(cert)
        return cert

    # -- application traffic ---------------------------------------------

    def accept(self, peer_name: str, peer_key: bytes) -> None:
        if self.admit is not None and not self.admit(peer_name, peer_key):
            raise ChannelRefused(f"{self.tee_name} refused {peer_name}")

    def serve(self, channel: SecureChannel, data: bytes) -> bytes:
        if self.forward is not None:
            return self.forward(self, data)
        return self.echo_body + str(self.tee_name).encode() + b": " + data


def tlsa_admits(resolver, suffix: str) -> Callable[[str, bytes], bool]:
    """Admit a peer iff its name sits under ``suffix`` and a validated
    TLSA 3 1 0 record at that name pins the presented key."""
    parent = Name.from_text(suffix).lower()

    def check(peer_name: str, peer_key: bytes) -> bool:
        name = Name.from_text(peer_name).lower()
        if not name.is_subdomain_of(parent) or name == parent:
            return False
        want = spki_der(peer_key)
        try:
            rdatas = resolver.query(name, RRType.TLSA).rdatas()
        except Exception:
            return False
        return any((r.usage, r.selector, r.matching_type, r.association) == (3, 1, 0, want) for r in rdatas)

    return check
