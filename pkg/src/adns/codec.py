"""Deterministic length-prefixed binary encoding shared by reports,
certificates, CSRs and ledger entries."""

from __future__ import annotations

import struct


class DecodeError(ValueError):
    pass


class Writer:
    def __init__(self) -> None:
        self._buf = bytearray()

    def u8(self, v: int) -> Writer:
        self._buf += struct.pack("!B", v)
        return self

    def u16(self, v: int) -> Writer:
        self._buf += struct.pack("!H", v)
        return self

    def u32(self, v: int) -> Writer:
        self._buf += struct.pack("!I", v)
        return self

    def u64(self, v: int) -> Writer:
        self._buf += struct.pack("!Q", v)
        return self

    def blob(self, data: bytes) -> Writer:
        self.u32(len(data))
        self._buf += data
        return self

    def text(self, s: str) -> Writer:
        return self.blob(s.encode("utf-8"))

    def raw(self, data: bytes) -> Writer:
        self._buf += data
        return self

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = bytes(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise DecodeError("truncated input")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("!I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("!Q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(str(exc)) from None

    def raw(self, n: int) -> bytes:
        return self._take(n)

    @property
    def offset(self) -> int:
        return self._pos

    def at_end(self) -> bool:
        return self._pos == len(self._data)

    def expect_end(self) -> None:
        if not self.at_end():
            raise DecodeError(f"{len(self._data) - self._pos} trailing octets")
