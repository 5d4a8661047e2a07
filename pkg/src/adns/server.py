"""Network frontends for one aDNS instance: DNS over UDP (always truncated)
and TCP, the JSON RPC endpoints, the self-endorsement endpoint and the
EAT token service. Transports call :meth:`AdnsServer.udp`,
:meth:`AdnsServer.tcp` and :meth:`AdnsServer.http`; socket bindings live
in :mod:`adns.netio`.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import threading
from typing import Callable, Mapping
from urllib.parse import parse_qs, urlsplit

from . import attest
from .acme import AcmeClient, AcmeError
from .attest import AttestationError, AttestedKey, KeyUsage, ServiceConfig, SimPlatform
from .dnswire import (
    DnsMessage,
    Flags,
    MalformedMessage,
    RCode,
    WireError,
    decode_message,
    encode_message,
    frame_tcp,
    unframe_tcp,
)
from .keys import SigningKey, verify_signature
from .ledger import Ledger, LedgerError
from .zone import (
    DelegationRequest,
    RegistrationRequest,
    Zone,
    ZoneConfig,
    ZoneError,
    records_from_json,
)

UDP_LIMIT = 512
ADNS_ROLE = "adns"
EAT_PREFIX = "/common"

_STATUS = {
    "DaneKeyMismatch": 403,
    "UnknownRegistrant": 403,
    "UnknownDelegation": 403,
    "Unauthenticated": 401,
    "NameClash": 409,
    "AlreadyDelegated": 409,
    "AlreadyConfigured": 409,
    "NotConfigured": 409,
    "NoSuchService": 404,
    "NoFreshAttestation": 404,
    "NotFound": 404,
}


class RpcError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


def b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode()


def unb64url(text: str) -> bytes:
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


def _short_hex(value: object) -> object:
    """0x-prefixed digests shed their zero extension for EAT claims."""
    if isinstance(value, str) and value.startswith("0x") and len(value) > 2:
        return f"0x{int(value, 16):X}"
    return value


def verify_eat(token: str, keys: Mapping) -> dict:
    """Check a compact token against a JWKS-like key list; return payload."""
    head_b64, body_b64, sig_b64 = token.split(".")
    header = json.loads(unb64url(head_b64))
    for k in keys["keys"]:
        if k["kid"] == header["kid"]:
            if verify_signature(unb64url(k["x"]), unb64url(sig_b64), f"{head_b64}.{body_b64}".encode()):
                return json.loads(unb64url(body_b64))
            break
    raise ValueError("token signature does not verify against any published key")


class AdnsServer:
    """One aDNS instance: its TEE identity, zone, ACME client and token keys."""

    def __init__(
        self,
        rng: random.Random,
        clock: Callable[[], int],
        platform: SimPlatform | None = None,
        measurement: bytes = attest.digest32(0xAD05),
        hostdata: bytes = attest.digest32(0),
        instance_id: str = "adns-0",
        ca: Callable | None = None,
        ledger_path: str | None = None,
    ):
        self.rng = rng
        self.clock = clock
        self.platform = platform
        self.measurement = measurement
        self.hostdata = hostdata
        self.instance_id = instance_id
        self.tls_key = SigningKey.generate(rng)
        self.ksk = SigningKey.generate(rng)
        self.ledger = Ledger(SigningKey.generate(rng), ledger_path)
        self._ca = ca
        self.zone: Zone | None = None
        self.acme: AcmeClient | None = None
        self.report: bytes | None = None
        self._eat_keys: list[SigningKey] = []
        self._lock = threading.RLock()

    # -- configuration ---------------------------------------------------

    def endorsement_report(self, config: ZoneConfig) -> bytes:
        attributes = tuple(
            (f"policy.{kind}", json.dumps(doc.to_json(), sort_keys=True, separators=(",", ":")))
            for kind, doc in sorted(config.policies.items())
        )
        cfg = ServiceConfig(config.origin_name.to_text(), self.instance_id, "ns0", ADNS_ROLE, (), attributes)
        keys = [AttestedKey(KeyUsage.DANE, self.tls_key.public), AttestedKey(KeyUsage.KSK, self.ksk.public)]
        report = self.platform.issue_report(self.measurement, self.hostdata, cfg, keys, self.clock())
        return attest.report_encode(report)

    def configure(self, config: ZoneConfig) -> Zone:
        with self._lock:
            if self.zone is not None:
                raise RpcError("AlreadyConfigured", "instance is already configured")
            report = None
            if config.attested:
                if self.platform is None:
                    raise RpcError("BadConfig", "attested zones need a TEE platform")
                report = self.endorsement_report(config)
            zone = Zone(config, self.rng, self.ledger, self.ksk, report)
            zone.init(self.clock())
            self.report = report
            self.zone = zone
            if self._ca is not None:
                self.acme = AcmeClient(zone, self._ca, self.rng, self.clock)
            self._eat_keys.append(SigningKey.generate(self.rng))
            return zone

    # -- DNS -------------------------------------------------------------

    def udp(self, data: bytes) -> bytes:
        """Always truncate: a header plus the echoed question, tc=1."""
        try:
            query = decode_message(data)
        except WireError:
            return self._formerr(data)
        if query.flags.qr or query.question is None:
            return self._formerr(data)
        flags = Flags(qr=True, opcode=query.flags.opcode, tc=True, rd=query.flags.rd)
        return encode_message(DnsMessage(query.id, flags, query.question), max_size=UDP_LIMIT)

    @staticmethod
    def _formerr(data: bytes) -> bytes:
        if len(data) < 2:
            return b""
        mid = int.from_bytes(data[:2], "big")
        return encode_message(DnsMessage(mid, Flags(qr=True, rcode=RCode.FORMERR)))

    def answer(self, query: DnsMessage) -> DnsMessage:
        q = query.question
        base = dict(qr=True, opcode=query.flags.opcode, rd=query.flags.rd)
        if query.flags.qr or q is None:
            return DnsMessage(query.id, Flags(**base, rcode=RCode.FORMERR), q)
        if query.flags.opcode != 0:
            return DnsMessage(query.id, Flags(**base, rcode=RCode.NOTIMP), q)
        zone = self.zone
        if zone is None or q.qclass != 1:
            return DnsMessage(query.id, Flags(**base, rcode=RCode.REFUSED), q)
        try:
            res = zone.lookup(q.name, q.qtype)
        except ZoneError:
            return DnsMessage(query.id, Flags(**base, rcode=RCode.REFUSED), q)
        return DnsMessage(
            query.id, Flags(**base, aa=res.aa, rcode=res.rcode), q, res.answers, res.authority, res.additional
        )

    def tcp(self, stream: bytes) -> bytes:
        """Answer every complete frame in order. A trailing partial frame
        or an undecodable frame ends the connection (ConnectionError)."""
        frames, tail = unframe_tcp(stream)
        out = bytearray()
        for frame in frames:
            try:
                query = decode_message(frame)
            except MalformedMessage:
                raise ConnectionError("undecodable frame; closing") from None
            out += frame_tcp(encode_message(self.answer(query)))
        if tail:
            raise ConnectionError("framing violation; closing")
        return bytes(out)

    # -- RPC -------------------------------------------------------------

    def http(
        self,
        method: str,
        target: str,
        body: Mapping | None,
        client_key: bytes | None = None,
    ) -> tuple[int, dict]:
        url = urlsplit(target)
        params = {k: v[-1] for k, v in parse_qs(url.query).items()}
        try:
            return 200, self._route(method.upper(), url.path, dict(body or {}), params, client_key)
        except RpcError as exc:
            return _STATUS.get(exc.code, 400), {"code": exc.code, "message": str(exc)}
        except (ZoneError, AcmeError, AttestationError, LedgerError) as exc:
            return _STATUS.get(exc.code, getattr(exc, "status", 400)), {"code": exc.code, "message": str(exc)}
        except (KeyError, ValueError, TypeError) as exc:
            return 400, {"code": "Malformed", "message": f"{type(exc).__name__}: {exc}"}

    def _need_zone(self) -> Zone:
        if self.zone is None:
            raise RpcError("NotConfigured", "instance has not been configured")
        return self.zone

    @staticmethod
    def _need_key(client_key: bytes | None) -> bytes:
        if not client_key:
            raise RpcError("Unauthenticated", "endpoint requires an authenticated channel")
        return client_key

    def _receipt(self, seq: int) -> dict:
        return {"seq": seq, "receipt": self.ledger.get_receipt(seq).to_json()}

    def _route(self, method: str, path: str, body: dict, params: dict, client_key: bytes | None) -> dict:
        if path.startswith(EAT_PREFIX) or path == "/create-signing-key":
            return self._eat(method, path, params)
        if method == "GET":
            if path == "/endorsements":
                return self.endorsements()
            zone = self._need_zone()
            if path == "/ledger":
                size, root, sig = self.ledger.signed_root()
                return {"entries": self.ledger.dump(), "signed_root": {"tree_size": size, "root": root.hex(), "signature": sig.hex()},
                        "receipt_key": self.ledger.receipt_public_key.hex()}
            if path == "/receipt":
                seq = int(params["seq"])
                return {**self._receipt(seq), "entry": self.ledger.entries[seq].to_json()}
            if path == "/snapshot":
                return {"records": zone.snapshot_json(), "digest": zone.served_digest()}
            if path == "/ds":
                ds = zone.ds()
                return {"key_tag": ds.key_tag, "algorithm": ds.algorithm, "digest_type": ds.digest_type, "digest": ds.digest.hex()}
            raise RpcError("NotFound", f"no GET endpoint {path}")
        if path == "/configure":
            self.configure(ZoneConfig.from_json(body["config"]))
            return {"origin": self.zone.origin.to_text(), **self.endorsements()}
        zone = self._need_zone()
        now = self.clock()
        if path == "/register_service":
            key = self._need_key(client_key)
            req = RegistrationRequest(
                bytes.fromhex(body["report"]), key, body["address"], bytes.fromhex(body.get("key_proof", ""))
            )
            entry = zone.update_registration(req, now) if body.get("update") else zone.register_service(req, now)
            return self._receipt(entry.seq)
        if path == "/register_delegation":
            key = self._need_key(client_key)
            req = DelegationRequest(bytes.fromhex(body["report"]), tuple((n, a) for n, a in body["glue"]), key)
            entry = zone.update_delegation(req, now) if body.get("update") else zone.register_delegation(req, now)
            return self._receipt(entry.seq)
        if path == "/get_certificate":
            key = self._need_key(client_key)
            if self.acme is None:
                raise RpcError("NoCa", "no certificate authority configured")
            cert = self.acme.request_certificate(bytes.fromhex(body["csr"]), key)
            return {"certificate": cert.to_bytes().hex(), "serial": cert.serial}
        if path == "/resign":
            return self._receipt(zone.resign(now).seq)
        if path == "/acme_refresh":
            renewed = self.acme.refresh() if self.acme else []
            return {"renewed": [c.serial for c in renewed]}
        raise RpcError("NotFound", f"no POST endpoint {path}")

    def endorsements(self) -> dict:
        return {
            "report": self.report.hex() if self.report else None,
            "ksk": self.ksk.public.hex(),
            "tls_key": self.tls_key.public.hex(),
            "receipt_key": self.ledger.receipt_public_key.hex(),
        }

    # -- EAT tokens ------------------------------------------------------

    @staticmethod
    def _kid(key: SigningKey) -> str:
        return hashlib.sha256(key.public).hexdigest()[:16]

    def _eat(self, method: str, path: str, params: dict) -> dict:
        base = "https://" + (self.zone.origin.to_text() if self.zone else "adns")
        if path == "/common/v2.0/.well-known/openid-configuration":
            return {
                "issuer": base,
                "jwks_uri": base + "/common/discovery/v2.0/keys",
                "token_endpoint": base + "/common/oauth2/v2.0/token",
                "create_signing_key_endpoint": base + "/create-signing-key",
                "id_token_signing_alg_values_supported": ["EdDSA"],
            }
        if path == "/common/discovery/v2.0/keys":
            with self._lock:
                keys = list(self._eat_keys)
            return {"keys": [{"kty": "OKP", "crv": "Ed25519", "kid": self._kid(k), "x": b64url(k.public)} for k in keys]}
        if path == "/create-signing-key" and method == "POST":
            with self._lock:
                key = SigningKey.generate(self.rng)
                self._eat_keys.append(key)
            return {"kid": self._kid(key)}
        if path == "/common/oauth2/v2.0/token":
            return {"token": self.eat_token(params["service"])}
        raise RpcError("NotFound", f"no EAT endpoint {path}")

    def eat_token(self, service: str) -> str:
        from .dnswire import Name

        zone = self._need_zone()
        name = Name.from_text(service).lower()
        data = zone.data
        regs = [r for r in data.registrations.values() if r.tee == name or name in {n for n, _, _ in r.origin_owners()}]
        if not regs:
            raise RpcError("NoSuchService", f"{name} has no registration")
        now = self.clock()
        lifetime = zone.config.registration_lifetime
        live = [r for r in regs if r.registered_at + lifetime > now]
        if not live:
            raise RpcError("NoFreshAttestation", f"{name} has no unexpired attestation")
        reg = max(live, key=lambda r: (r.registered_at, r.seq))
        claims = {k: _short_hex(v) for k, v in reg.claims.items() if not isinstance(v, list)}
        payload = {
            **claims,
            "iss": zone.origin.to_text(),
            "sub": name.to_text(),
            "iat": now,
            "exp": min(now + zone.config.attest_ttl, reg.registered_at + lifetime),
            "report_digest": hashlib.sha256(reg.encoded).hexdigest(),
        }
        with self._lock:
            key = self._eat_keys[-1]
        header = {"alg": "EdDSA", "kid": self._kid(key), "typ": "JWT"}
        signing_input = (
            b64url(json.dumps(header, sort_keys=True).encode()) + "." + b64url(json.dumps(payload, sort_keys=True).encode())
        )
        return signing_input + "." + b64url(key.sign(signing_input.encode()))


def snapshot_records(snapshot: dict):
    return records_from_json(snapshot["records"])
