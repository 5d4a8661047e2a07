"""Loopback socket bindings: DNS over UDP/TCP and JSON RPC over TLS.

The TLS certificate is self-signed with the instance key; clients ignore
the X.509 chain and compare the presented raw public key with the key
they expect (for aDNS instances, the DANE key attested in /endorsements).
Client authentication travels as a signature over the request in
headers, so the server learns the same channel key a mutually
authenticated channel would give it.
"""

from __future__ import annotations

import datetime
import http.client
import http.server
import json
import socket
import socketserver
import ssl
import struct
import tempfile
import threading
from typing import Callable, Mapping

from cryptography import x509
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
from cryptography.x509.oid import NameOID

from .keys import SigningKey, verify_signature

KEY_HEADER = "X-Adns-Key"
SIG_HEADER = "X-Adns-Signature"
TIMEOUT = 5.0

# (method, target, body, headers, client_key) -> (status, json body)
HttpHandler = Callable[[str, str, "Mapping | None", "Mapping[str, str]", "bytes | None"], "tuple[int, dict]"]


def request_message(method: str, target: str, body: bytes) -> bytes:
    return b"adns-rpc\x00" + method.upper().encode() + b"\x00" + target.encode() + b"\x00" + body


def parse_addr(address: str, default_port: int = 53) -> tuple[str, int]:
    """``host:port``, ``:port`` or a bare host (default port)."""
    if ":" not in address:
        return address, default_port
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


def self_signed_cert(key: SigningKey, common_name: str) -> tuple[bytes, bytes]:
    """PEM certificate and PEM PKCS#8 key for an Ed25519 signing key."""
    priv = key.private_key
    subject = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    start = datetime.datetime(2020, 1, 1, tzinfo=datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(subject)
        .issuer_name(subject)
        .public_key(priv.public_key())
        .serial_number(int.from_bytes(key.public[:8], "big") | 1)
        .not_valid_before(start)
        .not_valid_after(start + datetime.timedelta(days=36500))
        .sign(priv, None)
    )
    key_pem = priv.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption())
    return cert.public_bytes(serialization.Encoding.PEM), key_pem


def _server_context(key: SigningKey, name: str) -> ssl.SSLContext:
    cert_pem, key_pem = self_signed_cert(key, name)
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_3
    with tempfile.NamedTemporaryFile("wb", suffix=".pem") as cf, tempfile.NamedTemporaryFile("wb", suffix=".pem") as kf:
        cf.write(cert_pem)
        kf.write(key_pem)
        cf.flush()
        kf.flush()
        ctx.load_cert_chain(cf.name, kf.name)
    return ctx


def peer_public_key(sock: ssl.SSLSocket) -> bytes:
    der = sock.getpeercert(binary_form=True)
    pub = x509.load_der_x509_certificate(der).public_key()
    if not isinstance(pub, Ed25519PublicKey):
        raise ssl.SSLError("peer did not present an Ed25519 key")
    return pub.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


# ---------------------------------------------------------------------------
# Servers
# ---------------------------------------------------------------------------


class _UdpServer(socketserver.ThreadingMixIn, socketserver.UDPServer):
    daemon_threads = True
    allow_reuse_address = True


class _TcpServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True


class _HttpServer(http.server.ThreadingHTTPServer):
    daemon_threads = True


def _recv_exact(sock, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class Listeners:
    """Holds started socket servers; ``close`` stops them all."""

    def __init__(self):
        self._servers: list[socketserver.BaseServer] = []
        self.addresses: dict[str, str] = {}

    def _start(self, kind: str, srv: socketserver.BaseServer) -> str:
        host, port = srv.server_address[:2]
        threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True).start()
        self._servers.append(srv)
        self.addresses[kind] = f"{host}:{port}"
        return self.addresses[kind]

    def dns(self, endpoint, udp_addr: str = "127.0.0.1:0", tcp_addr: str = "127.0.0.1:0") -> tuple[str, str]:
        class Udp(socketserver.BaseRequestHandler):
            def handle(self):
                data, sock = self.request
                out = endpoint.udp(data)
                if out:
                    sock.sendto(out, self.client_address)

        class Tcp(socketserver.BaseRequestHandler):
            def handle(self):
                sock = self.request
                sock.settimeout(TIMEOUT)
                try:
                    while True:
                        head = _recv_exact(sock, 2)
                        if head is None:
                            return
                        frame = _recv_exact(sock, struct.unpack("!H", head)[0])
                        if frame is None:
                            return
                        sock.sendall(endpoint.tcp(head + frame))
                except (ConnectionError, OSError):
                    return

        udp = self._start("udp", _UdpServer(parse_addr(udp_addr), Udp))
        # Reuse the UDP port number for TCP when it was chosen by the kernel.
        tcp_host, tcp_port = parse_addr(tcp_addr)
        if tcp_port == 0:
            tcp_port = parse_addr(udp)[1]
        tcp = self._start("tcp", _TcpServer((tcp_host, tcp_port), Tcp))
        return udp, tcp

    def https(self, handler: HttpHandler, key: SigningKey, address: str = "127.0.0.1:0", name: str = "adns") -> str:
        class Handler(http.server.BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def _serve(self, method: str):
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                client_key = None
                if KEY_HEADER in self.headers:
                    pub = bytes.fromhex(self.headers[KEY_HEADER])
                    sig = bytes.fromhex(self.headers.get(SIG_HEADER, ""))
                    if verify_signature(pub, sig, request_message(method, self.path, raw)):
                        client_key = pub
                try:
                    body = json.loads(raw) if raw else None
                except ValueError:
                    status, out = 400, {"code": "Malformed", "message": "body is not JSON"}
                else:
                    status, out = handler(method, self.path, body, dict(self.headers), client_key)
                data = json.dumps(out, sort_keys=True).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                self._serve("GET")

            def do_POST(self):
                self._serve("POST")

        srv = _HttpServer(parse_addr(address), Handler)
        srv.socket = _server_context(key, name).wrap_socket(srv.socket, server_side=True)
        return self._start("rpc", srv)

    def close(self) -> None:
        for srv in self._servers:
            srv.shutdown()
            srv.server_close()
        self._servers.clear()


# ---------------------------------------------------------------------------
# Client transport
# ---------------------------------------------------------------------------


class SocketTransport:
    """Implements the resolver transport and the RPC client over loopback.

    ``expected_keys`` maps an RPC address to the raw public key its TLS
    certificate must carry; addresses without an entry are accepted on
    first use and recorded (trust-on-first-use for /endorsements, which
    the caller then checks against the attested key)."""

    def __init__(self, timeout: float = TIMEOUT, routes: Mapping[str, str] | None = None):
        self.timeout = timeout
        self.routes = dict(routes or {})
        self.expected_keys: dict[str, bytes] = {}
        self.seen_keys: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def udp(self, address: str, data: bytes) -> bytes:
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            s.settimeout(self.timeout)
            s.sendto(data, parse_addr(self.routes.get(address, address)))
            return s.recvfrom(65535)[0]

    def tcp(self, address: str, data: bytes) -> bytes:
        with socket.create_connection(parse_addr(self.routes.get(address, address)), timeout=self.timeout) as s:
            s.sendall(struct.pack("!H", len(data)) + data)
            head = _recv_exact(s, 2)
            if head is None:
                raise ConnectionError("connection closed before a response")
            body = _recv_exact(s, struct.unpack("!H", head)[0])
            if body is None:
                raise ConnectionError("truncated TCP response")
            return body

    def rpc(
        self,
        address: str,
        method: str,
        path: str,
        body: Mapping | None,
        client_key: SigningKey | None = None,
        headers: Mapping[str, str] | None = None,
    ) -> tuple[int, dict]:
        raw = json.dumps(body, sort_keys=True).encode() if body is not None else b""
        hdrs = {"Content-Type": "application/json", **(headers or {})}
        if client_key is not None:
            hdrs[KEY_HEADER] = client_key.public.hex()
            hdrs[SIG_HEADER] = client_key.sign(request_message(method, path, raw)).hex()
        ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
        ctx.check_hostname = False
        ctx.verify_mode = ssl.CERT_NONE
        host, port = parse_addr(self.routes.get(address, address), 443)
        conn = http.client.HTTPSConnection(host, port, timeout=self.timeout, context=ctx)
        try:
            conn.connect()
            presented = peer_public_key(conn.sock)
            with self._lock:
                expected = self.expected_keys.get(address)
                self.seen_keys[address] = presented
            if expected is not None and expected != presented:
                raise ssl.SSLError(f"{address} presented an unexpected key")
            conn.request(method, path, body=raw or None, headers=hdrs)
            resp = conn.getresponse()
            return resp.status, json.loads(resp.read() or b"{}")
        finally:
            conn.close()
