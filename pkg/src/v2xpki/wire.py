"""Byte-level encoding primitives and the shared time base.

Layout rules used by every structure in the toolkit:

* integers are big-endian, fixed width
* variable byte-strings carry a u16 length prefix
* lists carry a u8 element count
* tagged unions and enums spend exactly one tag byte

Time64 values are microseconds since 2004-01-01T00:00:00Z as a u64;
durations are u32 seconds. Clocks are always injected as zero-argument
callables returning a Time64, never read ambiently by protocol code.
"""

from __future__ import annotations

import time
from typing import Callable

MAX_BYTES_FIELD = 0xFFFF
MAX_LIST_LEN = 0xFF

TIME64_EPOCH_UNIX = 1072915200  # 2004-01-01T00:00:00Z
MICROS_PER_SECOND = 10**6
WEEK_SECONDS = 7 * 86400
WEEK_MICROS = WEEK_SECONDS * MICROS_PER_SECOND

Clock = Callable[[], int]


def time64_now() -> int:
    return time.time_ns() // 1000 - TIME64_EPOCH_UNIX * MICROS_PER_SECOND


def time64_from_unix(unix_seconds: float) -> int:
    return round((unix_seconds - TIME64_EPOCH_UNIX) * MICROS_PER_SECOND)


def fixed_clock(value: int) -> Clock:
    return lambda: value


class DecodeError(Exception):
    """Input bytes rejected; carries the offset where decoding stopped."""

    def __init__(self, offset: int, reason: str):
        self.offset = offset
        self.reason = reason
        super().__init__(f"decode error at byte {offset}: {reason}")


class Writer:
    def __init__(self):
        self._buf = bytearray()

    def _uint(self, value: int, width: int, what: str) -> None:
        if not 0 <= value < 1 << (8 * width):
            raise ValueError(f"{what} {value} does not fit in {width} bytes")
        self._buf += value.to_bytes(width, "big")

    def u8(self, value: int) -> None:
        self._uint(value, 1, "u8")

    def u16(self, value: int) -> None:
        self._uint(value, 2, "u16")

    def u32(self, value: int) -> None:
        self._uint(value, 4, "u32")

    def u64(self, value: int) -> None:
        self._uint(value, 8, "u64")

    def raw(self, data: bytes) -> None:
        self._buf += data

    def bytes_field(self, data: bytes) -> None:
        if len(data) > MAX_BYTES_FIELD:
            raise ValueError(f"byte-string of {len(data)} exceeds the u16 length prefix")
        self.u16(len(data))
        self._buf += data

    def list_count(self, count: int) -> None:
        if count > MAX_LIST_LEN:
            raise ValueError(f"list of {count} exceeds the u8 count prefix")
        self.u8(count)

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    @property
    def offset(self) -> int:
        return self._pos

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def take(self, count: int, what: str) -> bytes:
        if self.remaining < count:
            raise DecodeError(self._pos, f"truncated {what}: need {count} bytes, have {self.remaining}")
        chunk = self._data[self._pos : self._pos + count]
        self._pos += count
        return chunk

    def peek_u8(self, what: str = "tag") -> int:
        if self.remaining < 1:
            raise DecodeError(self._pos, f"truncated {what}: need 1 bytes, have 0")
        return self._data[self._pos]

    def _uint(self, width: int, what: str) -> int:
        return int.from_bytes(self.take(width, what), "big")

    def u8(self, what: str = "u8") -> int:
        return self._uint(1, what)

    def u16(self, what: str = "u16") -> int:
        return self._uint(2, what)

    def u32(self, what: str = "u32") -> int:
        return self._uint(4, what)

    def u64(self, what: str = "u64") -> int:
        return self._uint(8, what)

    def bytes_field(self, what: str = "byte-string") -> bytes:
        length = self.u16(f"{what} length")
        return self.take(length, what)

    def list_count(self, what: str = "list") -> int:
        return self.u8(f"{what} count")

    def expect_end(self) -> None:
        if self.remaining:
            raise DecodeError(self._pos, f"{self.remaining} trailing bytes")
