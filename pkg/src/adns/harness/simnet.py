"""Deterministic in-process network: a virtual clock, an address registry
and adversary hooks. The same registration interface is offered by
:class:`SocketNet`, which binds every endpoint to a loopback socket and
routes virtual addresses to real ones."""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping

from ..keys import SigningKey
from ..netio import HttpHandler, Listeners, SocketTransport

# (kind, address, request bytes, response bytes) -> response bytes
Tamper = Callable[[str, str, bytes, bytes], bytes]


class VirtualClock:
    """Integer seconds, advanced only by the scenario runner."""

    def __init__(self, start: int):
        self._now = start
        self._lock = threading.Lock()

    def __call__(self) -> int:
        with self._lock:
            return self._now

    def advance(self, seconds: int) -> int:
        if seconds < 0:
            raise ValueError("the virtual clock never runs backwards")
        with self._lock:
            self._now += seconds
            return self._now

    def set(self, now: int) -> None:
        with self._lock:
            if now < self._now:
                raise ValueError("the virtual clock never runs backwards")
            self._now = now


@dataclass
class Link:
    latency_ms: float = 0.0
    drop_rate: float = 0.0


@dataclass
class _Stats:
    messages: int = 0
    dropped: int = 0
    latency_ms: float = 0.0


class _Routing:
    """Shared bookkeeping for tamper hooks and link configuration."""

    def __init__(self, seed: int):
        self._rng = random.Random(f"simnet:{seed}")
        self._lock = threading.Lock()
        self.links: dict[str, Link] = {}
        self.tamper: dict[str, Tamper] = {}
        self.stats = _Stats()

    def _transit(self, address: str) -> None:
        link = self.links.get(address)
        with self._lock:
            self.stats.messages += 1
            if link is None:
                return
            self.stats.latency_ms += link.latency_ms
            if link.drop_rate and self._rng.random() < link.drop_rate:
                self.stats.dropped += 1
                raise TimeoutError(f"message to {address} dropped")

    def _tampered(self, kind: str, address: str, request: bytes, response: bytes) -> bytes:
        hook = self.tamper.get(address)
        return hook(kind, address, request, response) if hook else response


class SimNet(_Routing):
    """Resolver and RPC transport over registered in-process endpoints.

    DNS endpoints provide ``udp(bytes)`` and ``tcp(stream)``; HTTP
    endpoints are handlers ``(method, target, body, headers, client_key)``.
    RPC bodies are round-tripped through JSON so simulated and socket runs
    exchange identical data."""

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self.dns_endpoints: dict[str, object] = {}
        self.http_endpoints: dict[str, HttpHandler] = {}
        self.server_keys: dict[str, bytes] = {}
        self.expected_keys: dict[str, bytes] = {}

    def add_dns(self, address: str, endpoint) -> None:
        self.dns_endpoints[address] = endpoint

    def add_http(self, address: str, handler: HttpHandler, key: SigningKey, name: str = "") -> None:
        self.http_endpoints[address] = handler
        self.server_keys[address] = key.public

    def remove(self, address: str) -> None:
        self.dns_endpoints.pop(address, None)
        self.http_endpoints.pop(address, None)

    def _dns(self, address: str):
        self._transit(address)
        try:
            return self.dns_endpoints[address]
        except KeyError:
            raise TimeoutError(f"no DNS server at {address}") from None

    def udp(self, address: str, data: bytes) -> bytes:
        out = self._dns(address).udp(data)
        if not out:
            raise TimeoutError(f"{address} sent no UDP response")
        return self._tampered("udp", address, data, out)

    def tcp(self, address: str, data: bytes) -> bytes:
        stream = self._dns(address).tcp(len(data).to_bytes(2, "big") + data)
        out = stream[2:]
        if len(stream) < 2 or int.from_bytes(stream[:2], "big") != len(out):
            raise ConnectionError(f"{address} returned a malformed TCP stream")
        return self._tampered("tcp", address, data, out)

    def rpc(
        self,
        address: str,
        method: str,
        path: str,
        body: Mapping | None,
        client_key: SigningKey | None = None,
        headers: Mapping[str, str] | None = None,
    ) -> tuple[int, dict]:
        self._transit(address)
        handler = self.http_endpoints.get(address)
        if handler is None:
            raise TimeoutError(f"no RPC endpoint at {address}")
        expected = self.expected_keys.get(address)
        if expected is not None and expected != self.server_keys[address]:
            raise ConnectionError(f"{address} presented an unexpected key")
        wire = json.loads(json.dumps(body, sort_keys=True)) if body is not None else None
        status, out = handler(method, path, wire, dict(headers or {}), client_key.public if client_key else None)
        return status, json.loads(json.dumps(out, sort_keys=True))

    def close(self) -> None:
        pass


class SocketNet(_Routing):
    """The SimNet interface over loopback sockets.

    Virtual addresses (as published in glue and A records) are mapped to
    the ``host:port`` each listener was bound to."""

    def __init__(self, seed: int = 0, timeout: float = 5.0):
        super().__init__(seed)
        self.listeners = Listeners()
        self.sockets = SocketTransport(timeout)
        self.dns_routes: dict[str, str] = {}
        self.http_routes: dict[str, str] = {}

    @property
    def expected_keys(self) -> dict[str, bytes]:
        return _RouteView(self.sockets.expected_keys, self.http_routes)

    def add_dns(self, address: str, endpoint) -> None:
        udp, tcp = self.listeners.dns(endpoint)
        self.dns_routes[address] = udp

    def add_http(self, address: str, handler: HttpHandler, key: SigningKey, name: str = "adns") -> None:
        self.http_routes[address] = self.listeners.https(handler, key, name=name)

    def remove(self, address: str) -> None:
        self.dns_routes.pop(address, None)
        self.http_routes.pop(address, None)

    def _route(self, table: dict[str, str], address: str) -> str:
        self._transit(address)
        try:
            return table[address]
        except KeyError:
            raise TimeoutError(f"no endpoint at {address}") from None

    def udp(self, address: str, data: bytes) -> bytes:
        out = self.sockets.udp(self._route(self.dns_routes, address), data)
        return self._tampered("udp", address, data, out)

    def tcp(self, address: str, data: bytes) -> bytes:
        out = self.sockets.tcp(self._route(self.dns_routes, address), data)
        return self._tampered("tcp", address, data, out)

    def rpc(self, address, method, path, body, client_key=None, headers=None):
        return self.sockets.rpc(self._route(self.http_routes, address), method, path, body, client_key, headers)

    def close(self) -> None:
        self.listeners.close()


@dataclass
class _RouteView:
    """Writes expected keys for a virtual address to its real address."""

    store: dict[str, bytes]
    routes: dict[str, str] = field(default_factory=dict)

    def __setitem__(self, address: str, key: bytes) -> None:
        self.store[self.routes[address]] = key

    def get(self, address: str, default=None):
        real = self.routes.get(address)
        return self.store.get(real, default) if real else default

    def pop(self, address: str, default=None):
        real = self.routes.get(address)
        return self.store.pop(real, default) if real else default
