"""ACME dns-01 issuance: a mock certificate authority and the zone-side
client that drives it on behalf of registered TEEs.

Requests to the CA are JSON bodies authenticated by a detached Ed25519
signature over the canonical body, carried in the ``signature`` header.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

from .attest import KeyUsage
from .certs import Certificate, Csr
from .codec import DecodeError
from .dnswire import CAA, TXT, Name, RRType
from .keys import SigningKey, verify_signature
from .ledger import Ledger, OpKind, canonical_json

RENEWAL_WINDOW = 30 * 86400
REVOKE_CONTEXT = b"adns-revoke"


class AcmeError(Exception):
    code = "AcmeError"
    status = 400


def _error(name: str, status: int = 400) -> type[AcmeError]:
    return type(name, (AcmeError,), {"code": name, "status": status})


BadSignature = _error("BadSignature", 401)
EmptyNames = _error("EmptyNames")
InvalidValidity = _error("InvalidValidity")
OrderNotReady = _error("OrderNotReady", 409)
CsrMismatch = _error("CsrMismatch")
BadSelfSignature = _error("BadSelfSignature")
UnknownOrder = _error("UnknownOrder", 404)
UnknownAccount = _error("UnknownAccount", 404)
UnknownCertificate = _error("UnknownCertificate", 404)
KeyNotAttested = _error("KeyNotAttested", 403)
NameNotRegistered = _error("NameNotRegistered", 403)
UnknownRegistrant = _error("UnknownRegistrant", 403)
CaRejected = _error("CaRejected", 502)
BadCertificate = _error("BadCertificate", 502)


def b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode()


def jwk_thumbprint(public_key: bytes) -> str:
    """RFC 7638 thumbprint of an Ed25519 OKP key."""
    jwk = {"crv": "Ed25519", "kty": "OKP", "x": b64url(public_key)}
    return b64url(hashlib.sha256(json.dumps(jwk, sort_keys=True, separators=(",", ":")).encode()).digest())


def key_authorization(token: str, account_public_key: bytes) -> str:
    """The dns-01 TXT value for ``token`` under the given account key."""
    ka = f"{token}.{jwk_thumbprint(account_public_key)}"
    return b64url(hashlib.sha256(ka.encode()).digest())


def sign_body(key: SigningKey, body: Mapping) -> dict[str, str]:
    return {"signature": b64url(key.sign(canonical_json(dict(body))))}


def _unb64(text: str) -> bytes:
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


class DnsView(Protocol):
    """What the CA needs from DNS: the rdatas of a DNSSEC-validated RRset,
    empty when a validated denial was returned. Implementations raise
    DnssecFailure or ResolutionTimeout."""

    def rrset(self, name: Name, rrtype: int) -> list: ...


class DnssecFailure(Exception):
    pass


class ResolutionTimeout(Exception):
    pass


@dataclass
class CertOrder:
    id: int
    account: str
    names: tuple[str, ...]
    not_before: int
    not_after: int
    tokens: dict[str, str]
    status: str = "pending"
    reasons: dict[str, str] = field(default_factory=dict)
    certificate: int | None = None
    renewal_of: int | None = None

    def to_json(self) -> dict:
        return {
            "order": self.id,
            "status": self.status,
            "names": list(self.names),
            "not_before": self.not_before,
            "not_after": self.not_after,
            "challenges": dict(self.tokens),
            "reasons": dict(self.reasons),
            "certificate": self.certificate,
        }


class MockCA:
    """An RFC 8555-shaped CA that validates dns-01 challenges and CAA over
    DNSSEC and logs each CSR before signing."""

    def __init__(
        self,
        name: str,
        key: SigningKey,
        dns: DnsView,
        rng: random.Random,
        clock: Callable[[], int],
        log_key: SigningKey | None = None,
    ):
        self.name = name
        self.key = key
        self.dns = dns
        self.rng = rng
        self.clock = clock
        self.log = Ledger(log_key or SigningKey.generate(rng))
        self.accounts: dict[str, bytes] = {}
        self.orders: dict[int, CertOrder] = {}
        self.certificates: dict[int, Certificate] = {}
        self.csrs: dict[int, bytes] = {}
        self.revoked: set[int] = set()
        self._lock = threading.RLock()

    @property
    def public_key(self) -> bytes:
        return self.key.public

    # -- request plumbing ------------------------------------------------

    def handle(self, method: str, path: str, body: Mapping | None, headers: Mapping[str, str]) -> tuple[int, dict]:
        """HTTP-like entry point; returns (status, JSON body)."""
        try:
            with self._lock:
                return 200, self._route(method, path, dict(body or {}), headers)
        except AcmeError as exc:
            return exc.status, {"code": exc.code, "message": str(exc)}
        except (KeyError, ValueError, TypeError, DecodeError) as exc:
            return 400, {"code": "Malformed", "message": str(exc)}

    def _route(self, method: str, path: str, body: dict, headers: Mapping[str, str]) -> dict:
        if method == "GET":
            if path == "/log":
                return self.log_json()
            if path.startswith("/certificate/"):
                cid = int(path.rsplit("/", 1)[1])
                if cid not in self.certificates:
                    raise UnknownCertificate(str(cid))
                return {"certificate": self.certificates[cid].to_bytes().hex(), "revoked": cid in self.revoked}
            if path == "/directory":
                return {p: p for p in ("/new-account", "/new-order", "/challenge-ready", "/finalize", "/log")}
            raise UnknownOrder(f"no GET route {path}")
        sig = _unb64(headers.get("signature", ""))
        if path == "/new-account":
            pub = bytes.fromhex(body["public_key"])
            self._check_sig(pub, sig, body)
            return {"account": self.new_account(pub)}
        if path == "/revoke":
            return self._revoke(body, sig)
        account = body["account"]
        if account not in self.accounts:
            raise UnknownAccount(account)
        self._check_sig(self.accounts[account], sig, body)
        if path == "/new-order":
            order = self.new_order(
                account, body["names"], int(body["not_before"]), int(body["not_after"]), body.get("renewal_of")
            )
            return order.to_json()
        order = self._order(account, int(body["order"]))
        if path == "/challenge-ready":
            return self.validate(order).to_json()
        if path == "/finalize":
            cert = self.finalize(order, bytes.fromhex(body["csr"]))
            return {**order.to_json(), "certificate": cert.serial}
        raise UnknownOrder(f"no POST route {path}")

    def _check_sig(self, pub: bytes, sig: bytes, body: Mapping) -> None:
        if not verify_signature(pub, sig, canonical_json(dict(body))):
            raise BadSignature("request signature does not verify")

    def _order(self, account: str, oid: int) -> CertOrder:
        order = self.orders.get(oid)
        if order is None or order.account != account:
            raise UnknownOrder(str(oid))
        return order

    # -- protocol steps --------------------------------------------------

    def new_account(self, public_key: bytes) -> str:
        for url, pub in self.accounts.items():
            if pub == public_key:
                return url
        url = f"https://{self.name}/acct/{len(self.accounts)}"
        self.accounts[url] = public_key
        return url

    def new_order(self, account: str, names, not_before: int, not_after: int, renewal_of=None) -> CertOrder:
        names = tuple(Name.from_text(n).lower().to_text() for n in names)
        if not names:
            raise EmptyNames("order names no domains")
        if not_after <= not_before:
            raise InvalidValidity("notAfter must follow notBefore")
        if renewal_of is not None and int(renewal_of) not in self.certificates:
            raise UnknownCertificate(str(renewal_of))
        tokens = {n: b64url(self.rng.randbytes(16)) for n in names}
        order = CertOrder(len(self.orders), account, names, not_before, not_after, tokens,
                          renewal_of=None if renewal_of is None else int(renewal_of))
        self.orders[order.id] = order
        return order

    def _caa_allows(self, dns: DnsView, name: Name) -> str | None:
        """Walk from ``name`` towards the root; the first CAA RRset decides."""
        n = name
        while True:
            rrset = dns.rrset(n, RRType.CAA)
            if rrset:
                for caa in rrset:
                    if not isinstance(caa, CAA) or caa.tag.lower() != "issue":
                        continue
                    parts = [p.strip() for p in caa.value.decode("utf-8", "replace").split(";")]
                    if parts[0].lower() != self.name.lower():
                        continue
                    params = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
                    methods = params.get("validationmethods")
                    if methods is None or "dns-01" in [m.strip() for m in methods.split(",")]:
                        return None
                return "CaaForbids"
            if not n.labels:
                return None
            n = n.parent()

    def validate(self, order: CertOrder) -> CertOrder:
        if order.status != "pending":
            return order
        dns = self.dns
        account_key = self.accounts[order.account]
        reasons = {}
        for n, token in order.tokens.items():
            name = Name.from_text(n)
            try:
                reason = self._caa_allows(dns, name)
                if reason is None:
                    txts = dns.rrset(name.prepend("_acme-challenge"), RRType.TXT)
                    want = key_authorization(token, account_key).encode()
                    if not any(isinstance(t, TXT) and t.joined() == want for t in txts):
                        reason = "TxtMismatch"
            except DnssecFailure:
                reason = "DnssecFailure"
            except ResolutionTimeout:
                reason = "Timeout"
            if reason is not None:
                reasons[n] = reason
        order.reasons = reasons
        order.status = "invalid" if reasons else "ready"
        return order

    def finalize(self, order: CertOrder, csr_bytes: bytes) -> Certificate:
        if order.status != "ready":
            raise OrderNotReady(f"order {order.id} is {order.status}")
        try:
            csr = Csr.from_bytes(csr_bytes)
        except DecodeError as exc:
            raise CsrMismatch(f"undecodable CSR: {exc}") from None
        if not csr.self_signature_ok():
            raise BadSelfSignature("CSR self-signature does not verify")
        if tuple(sorted(csr.names)) != tuple(sorted(order.names)):
            raise CsrMismatch("CSR names differ from the order")
        if order.renewal_of is not None:
            prior = self.certificates[order.renewal_of]
            if csr.public_key != prior.public_key:
                raise CsrMismatch("renewal CSR is for a different key")
            if csr.not_after - csr.not_before != order.not_after - order.not_before:
                raise CsrMismatch("renewal lifetime differs from the original")
        elif (csr.not_before, csr.not_after) != (order.not_before, order.not_after):
            raise CsrMismatch("CSR validity differs from the order")
        entry = self.log.record(
            OpKind.CertificateLogged,
            {"event": "csr", "order": order.id, "csr": csr_bytes.hex(), "names": list(csr.names),
             "not_before": order.not_before, "not_after": order.not_after},
            self.clock(),
        )
        cert = Certificate(
            len(self.certificates), self.name, csr.public_key, tuple(sorted(csr.names)),
            order.not_before, order.not_after, entry.seq,
        )
        cert = Certificate(**{**cert.__dict__, "signature": self.key.sign(cert.body())})
        self.certificates[cert.serial] = cert
        self.csrs[cert.serial] = csr_bytes
        order.status = "valid"
        order.certificate = cert.serial
        return cert

    def _revoke(self, body: dict, sig: bytes) -> dict:
        cid = int(body["certificate"])
        cert = self.certificates.get(cid)
        if cert is None:
            raise UnknownCertificate(str(cid))
        if not verify_signature(cert.public_key, sig, revocation_message(cert)):
            raise BadSignature("revocation not signed by the certified key")
        self.log.record(OpKind.CertificateLogged, {"event": "revoke", "certificate": cid}, self.clock())
        self.revoked.add(cid)
        return {"certificate": cid, "status": "revoked"}

    def rogue_issue(self, public_key: bytes, names, not_before: int, not_after: int) -> Certificate:
        """Mis-issuance with no log entry, for CT-monitor tests."""
        cert = Certificate(len(self.certificates) + 10_000, self.name, public_key,
                           tuple(sorted(Name.from_text(n).lower().to_text() for n in names)),
                           not_before, not_after, 2**63)
        return Certificate(**{**cert.__dict__, "signature": self.key.sign(cert.body())})

    def log_json(self) -> dict:
        size, root, sig = self.log.signed_root()
        return {"entries": self.log.dump(), "tree_size": size, "root": root.hex(), "signature": sig.hex(),
                "log_key": self.log.receipt_public_key.hex()}


def revocation_message(cert: Certificate) -> bytes:
    return REVOKE_CONTEXT + hashlib.sha256(cert.to_bytes()).digest()


def monitor_log(log: Mapping, certificates, ca_public_key: bytes) -> list[dict]:
    """CT-monitor check: every CA-signed certificate must match a logged CSR."""
    logged = {}
    for e in log["entries"]:
        p = e["payload"]
        if p.get("event") == "csr":
            logged[e["seq"]] = p
    findings = []
    for cert in certificates:
        if not cert.verify(ca_public_key):
            continue
        entry = logged.get(cert.ct_index)
        ok = (
            entry is not None
            and Csr.from_bytes(bytes.fromhex(entry["csr"])).public_key == cert.public_key
            and sorted(entry["names"]) == sorted(cert.names)
        )
        if not ok:
            findings.append({"finding": "UnloggedCertificate", "serial": cert.serial, "names": list(cert.names)})
    return findings


# ---------------------------------------------------------------------------
# The zone-side client
# ---------------------------------------------------------------------------


CaTransport = Callable[[str, str, "Mapping | None", "Mapping[str, str]"], "tuple[int, dict]"]


@dataclass
class IssuedCertificate:
    tee: Name
    certificate: Certificate
    csr: bytes


class AcmeClient:
    """Runs dns-01 issuance for one zone. The account private key is held
    here and never returned by any method."""

    def __init__(self, zone, ca: CaTransport, rng: random.Random, clock: Callable[[], int]):
        self.zone = zone
        self._ca = ca
        self._account_key = SigningKey.generate(rng)
        self._account: str | None = None
        self.clock = clock
        self.issued: list[IssuedCertificate] = []
        self._locks: dict[Name, threading.Lock] = {}
        self._guard = threading.Lock()
        self.faults: set[str] = set()

    @property
    def account_public_key(self) -> bytes:
        return self._account_key.public

    def _post(self, path: str, body: dict) -> dict:
        status, resp = self._ca("POST", path, body, sign_body(self._account_key, body))
        if status != 200:
            raise CaRejected(f"{path}: {resp.get('code')}: {resp.get('message')}")
        return resp

    def _ensure_account(self) -> str:
        if self._account is None:
            self._account = self._post("/new-account", {"public_key": self._account_key.public.hex()})["account"]
        return self._account

    def _lock_for(self, tee: Name) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(tee, threading.Lock())

    def _check_request(self, csr: Csr, requester_key: bytes):
        data = self.zone.data
        reg = data.registration_by_key(requester_key) if data else None
        if reg is None:
            raise UnknownRegistrant("requester has no live registration")
        if not csr.self_signature_ok():
            raise BadSelfSignature("CSR self-signature does not verify")
        if csr.public_key not in reg.report.keys_with_usage(KeyUsage.X509):
            raise KeyNotAttested("CSR key is not an attested X.509 key")
        origin = self.zone.origin
        registered = {n for n, _, _ in reg.origin_owners()}
        for text in csr.names:
            name = Name.from_text(text).lower()
            if not name.is_subdomain_of(origin) or name not in registered:
                raise NameNotRegistered(f"{name} is not a registered origin of this TEE")
        if not 0 < csr.not_after - csr.not_before <= self.zone.config.max_cert_lifetime:
            raise InvalidValidity("certificate lifetime outside zone bounds")
        return reg

    def request_certificate(self, csr_bytes: bytes, requester_key: bytes, renewal_of: int | None = None) -> Certificate:
        try:
            csr = Csr.from_bytes(csr_bytes)
        except DecodeError as exc:
            raise CsrMismatch(f"undecodable CSR: {exc}") from None
        reg = self._check_request(csr, requester_key)
        with self._lock_for(reg.tee):
            return self._issue(reg.tee, csr, csr_bytes, renewal_of)

    def _issue(self, tee: Name, csr: Csr, csr_bytes: bytes, renewal_of: int | None) -> Certificate:
        account = self._ensure_account()
        if renewal_of is None:
            nb, na = csr.not_before, csr.not_after
        else:
            nb = self.clock()
            na = nb + (csr.not_after - csr.not_before)
        body = {"account": account, "names": list(csr.names), "not_before": nb, "not_after": na}
        if renewal_of is not None:
            body["renewal_of"] = renewal_of
        order = self._post("/new-order", body)
        challenge_names = [Name.from_text(n).prepend("_acme-challenge") for n in order["challenges"]]
        try:
            if "skip-challenge-install" not in self.faults:
                values = {
                    Name.from_text(n).prepend("_acme-challenge"): key_authorization(tok, self._account_key.public)
                    for n, tok in order["challenges"].items()
                }
                self.zone.set_acme_txt(values, self.clock())
            state = self._post("/challenge-ready", {"account": account, "order": order["order"]})
            if state["status"] != "ready":
                raise CaRejected(f"order invalid: {state['reasons']}")
            done = self._post("/finalize", {"account": account, "order": order["order"], "csr": csr_bytes.hex()})
        finally:
            if "skip-challenge-install" not in self.faults:
                self.zone.clear_acme_txt(challenge_names, self.clock())
        status, fetched = self._ca("GET", f"/certificate/{done['certificate']}", None, {})
        if status != 200:
            raise CaRejected(f"certificate fetch failed: {fetched}")
        cert = Certificate.from_bytes(bytes.fromhex(fetched["certificate"]))
        if cert.public_key != csr.public_key or tuple(sorted(cert.names)) != tuple(sorted(csr.names)):
            raise BadCertificate("returned certificate does not match the CSR")
        if (cert.not_before, cert.not_after) != (nb, na):
            raise BadCertificate("returned certificate validity does not match the order")
        self.zone.install_certificate(tee, cert, self.clock())
        self.issued.append(IssuedCertificate(tee, cert, csr_bytes))
        return cert

    def refresh(self) -> list[Certificate]:
        """Renew every issued certificate within the renewal window of expiry."""
        now = self.clock()
        renewed = []
        for item in list(self.issued):
            cert = item.certificate
            live = self.zone.data.registrations.get(item.tee)
            if live is None or now < cert.not_after - RENEWAL_WINDOW:
                continue
            if any(i.certificate.serial != cert.serial and i.tee == item.tee and i.certificate.not_after > cert.not_after
                   for i in self.issued):
                continue
            csr = Csr.from_bytes(item.csr)
            with self._lock_for(item.tee):
                renewed.append(self._issue(item.tee, csr, item.csr, cert.serial))
        return renewed

    def revoke(self, serial: int, signature: bytes) -> dict:
        """Forward a revocation signed by the certified key."""
        body = {"certificate": serial}
        status, resp = self._ca("POST", "/revoke", body, {"signature": b64url(signature)})
        if status != 200:
            raise CaRejected(f"revoke: {resp.get('code')}")
        return resp
