"""Append-only Merkle log of zone mutations with signed inclusion receipts.

Hashing follows RFC 6962: leaves are ``SHA-256(0x00 || entry)`` and
interior nodes ``SHA-256(0x01 || left || right)``, with the tree split at
the largest power of two below its size.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .codec import DecodeError, Reader, Writer
from .keys import SigningKey, verify_signature

RECEIPT_CONTEXT = b"adns-ledger-root\x00"


class LedgerError(Exception):
    code = "LedgerError"


class TimeRegression(LedgerError):
    code = "TimeRegression"


class OutOfRange(LedgerError):
    code = "OutOfRange"


class GapInSequence(LedgerError):
    code = "GapInSequence"


class ReplayDivergence(LedgerError):
    code = "ReplayDivergence"


class OpKind(enum.IntEnum):
    Configure = 0
    RegisterService = 1
    UpdateRegistration = 2
    RegisterDelegation = 3
    UpdateDelegation = 4
    AcmeOrder = 5
    CertificateLogged = 6
    Resign = 7
    PolicyUpdate = 8


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    ledger_time: int
    op_kind: OpKind
    payload: bytes

    def to_bytes(self) -> bytes:
        return Writer().u64(self.seq).u64(self.ledger_time).u8(int(self.op_kind)).blob(self.payload).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> LedgerEntry:
        r = Reader(data)
        try:
            entry = cls(r.u64(), r.u64(), OpKind(r.u8()), r.blob())
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
        r.expect_end()
        return entry

    def body(self) -> dict:
        return json.loads(self.payload)

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "ledger_time": self.ledger_time,
            "op_kind": self.op_kind.name,
            "payload": self.body(),
            "leaf": leaf_hash(self.to_bytes()).hex(),
        }

    @classmethod
    def from_json(cls, data: dict) -> LedgerEntry:
        return cls(int(data["seq"]), int(data["ledger_time"]), OpKind[data["op_kind"]], canonical_json(data["payload"]))


def leaf_hash(data: bytes) -> bytes:
    return hashlib.sha256(b"\x00" + data).digest()


def node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(b"\x01" + left + right).digest()


def _split(n: int) -> int:
    k = 1
    while k << 1 < n:
        k <<= 1
    return k


class _Tree:
    """Leaf hashes plus a cache of complete power-of-two subtrees."""

    def __init__(self) -> None:
        self.leaves: list[bytes] = []
        self._cache: dict[tuple[int, int], bytes] = {}

    def hash(self, start: int, size: int) -> bytes:
        if size == 1:
            return self.leaves[start]
        key = (start, size)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        k = _split(size)
        h = node_hash(self.hash(start, k), self.hash(start + k, size - k))
        if size & (size - 1) == 0:
            self._cache[key] = h
        return h

    def root(self, size: int) -> bytes:
        if size == 0:
            return hashlib.sha256(b"").digest()
        return self.hash(0, size)

    def path(self, index: int, start: int, size: int) -> list[tuple[bytes, str]]:
        """Audit path from leaf ``index`` upwards, as (sibling, side)."""
        if size == 1:
            return []
        k = _split(size)
        if index - start < k:
            return self.path(index, start, k) + [(self.hash(start + k, size - k), "R")]
        return self.path(index, start + k, size - k) + [(self.hash(start, k), "L")]


@dataclass(frozen=True)
class Receipt:
    seq: int
    leaf_digest: bytes
    audit_path: tuple[tuple[bytes, str], ...]
    tree_size: int
    root_digest: bytes
    signature: bytes

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "leaf_digest": self.leaf_digest.hex(),
            "audit_path": [[d.hex(), side] for d, side in self.audit_path],
            "tree_size": self.tree_size,
            "root_digest": self.root_digest.hex(),
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, data: dict) -> Receipt:
        return cls(
            int(data["seq"]),
            bytes.fromhex(data["leaf_digest"]),
            tuple((bytes.fromhex(d), side) for d, side in data["audit_path"]),
            int(data["tree_size"]),
            bytes.fromhex(data["root_digest"]),
            bytes.fromhex(data["signature"]),
        )


def root_statement(tree_size: int, root: bytes) -> bytes:
    return RECEIPT_CONTEXT + struct.pack("!Q", tree_size) + root


def verify_receipt(entry_bytes: bytes, receipt: Receipt, receipt_public_key: bytes) -> bool:
    node = leaf_hash(entry_bytes)
    if node != receipt.leaf_digest:
        return False
    for sibling, side in receipt.audit_path:
        if side == "L":
            node = node_hash(sibling, node)
        elif side == "R":
            node = node_hash(node, sibling)
        else:
            return False
    if node != receipt.root_digest:
        return False
    return verify_signature(receipt_public_key, receipt.signature, root_statement(receipt.tree_size, node))


class Ledger:
    """Single-writer transparency log, optionally mirrored to a file."""

    def __init__(self, receipt_key: SigningKey, path: str | os.PathLike | None = None):
        self._key = receipt_key
        self._entries: list[LedgerEntry] = []
        self._tree = _Tree()
        self._lock = threading.Lock()
        self._path = path
        if path is not None and os.path.exists(path):
            for entry in read_ledger_file(path):
                self._append_locked(entry, persist=False)

    @property
    def receipt_public_key(self) -> bytes:
        return self._key.public

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    @property
    def last_time(self) -> int:
        return self._entries[-1].ledger_time if self._entries else 0

    def ledger_time(self, wall_clock: int) -> int:
        """Host time clamped so it never runs backwards."""
        return max(int(wall_clock), self.last_time)

    def _append_locked(self, entry: LedgerEntry, persist: bool = True) -> tuple[int, bytes]:
        if entry.seq != len(self._entries):
            raise GapInSequence(f"expected seq {len(self._entries)}, got {entry.seq}")
        if entry.ledger_time < self.last_time:
            raise TimeRegression(f"ledger time {entry.ledger_time} precedes {self.last_time}")
        data = entry.to_bytes()
        if persist and self._path is not None:
            with open(self._path, "ab") as fh:
                fh.write(struct.pack("!I", len(data)) + data)
        self._entries.append(entry)
        self._tree.leaves.append(leaf_hash(data))
        return entry.seq, self._tree.root(len(self._entries))

    def append(self, entry: LedgerEntry) -> tuple[int, bytes]:
        with self._lock:
            return self._append_locked(entry)

    def record(self, op_kind: OpKind, payload: dict, wall_clock: int) -> LedgerEntry:
        """Build and append the next entry; returns it."""
        with self._lock:
            entry = LedgerEntry(len(self._entries), self.ledger_time(wall_clock), op_kind, canonical_json(payload))
            self._append_locked(entry)
            return entry

    def root(self, size: int | None = None) -> bytes:
        with self._lock:
            return self._tree.root(len(self._entries) if size is None else size)

    def signed_root(self) -> tuple[int, bytes, bytes]:
        with self._lock:
            size = len(self._entries)
            root = self._tree.root(size)
        return size, root, self._key.sign(root_statement(size, root))

    def get_receipt(self, seq: int) -> Receipt:
        with self._lock:
            size = len(self._entries)
            if not 0 <= seq < size:
                raise OutOfRange(f"seq {seq} not in ledger of size {size}")
            path = tuple(self._tree.path(seq, 0, size))
            root = self._tree.root(size)
            leaf = self._tree.leaves[seq]
        return Receipt(seq, leaf, path, size, root, self._key.sign(root_statement(size, root)))

    def dump(self) -> list[dict]:
        return [e.to_json() for e in self.entries]


def compute_root(entries: Sequence[LedgerEntry]) -> bytes:
    tree = _Tree()
    tree.leaves = [leaf_hash(e.to_bytes()) for e in entries]
    return tree.root(len(entries))


def read_ledger_file(path: str | os.PathLike) -> list[LedgerEntry]:
    with open(path, "rb") as fh:
        data = fh.read()
    entries = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise DecodeError("truncated ledger file")
        (n,) = struct.unpack("!I", data[pos : pos + 4])
        entries.append(LedgerEntry.from_bytes(data[pos + 4 : pos + 4 + n]))
        pos += 4 + n
    return entries


def check_sequence(entries: Iterable[LedgerEntry]) -> list[LedgerEntry]:
    entries = list(entries)
    for i, entry in enumerate(entries):
        if entry.seq != i:
            raise GapInSequence(f"entry {i} has seq {entry.seq}")
        if i and entry.ledger_time < entries[i - 1].ledger_time:
            raise TimeRegression(f"entry {i} runs ledger time backwards")
    return entries


def replay(entries: Iterable[LedgerEntry], config: Any = None) -> str:
    """Re-execute ``entries`` through the zone transition function and
    return the hex digest of the resulting record set."""
    from .zone import replay_records, records_digest

    records = replay_records(check_sequence(entries), config)
    return records_digest(records)
