"""
Canonical binary encoding shared by demand signatures, envelopes, the WAL
and persistent images.

Integers are big-endian, variable data is length-prefixed with a 4-byte
big-endian length, and dict keys are written in sorted order so equal
values always encode to equal bytes.
"""

import struct
from typing import Any

MAX_FIELD_BYTES = 16 * 1024 * 1024

TAG_NONE = 0
TAG_INT = 1
TAG_FLOAT = 2
TAG_BOOL = 3
TAG_STR = 4
TAG_BYTES = 5
TAG_LIST = 6
TAG_DICT = 7

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1


class CanonicalDecodeError(ValueError):
    """Raised when a byte stream does not hold a valid canonical encoding"""

    def __init__(self, position: int, reason: str):
        super().__init__(f"{reason} at byte {position}")
        self.position = position
        self.reason = reason


class CanonicalWriter:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "CanonicalWriter":
        self._parts.append(struct.pack(">B", value))
        return self

    def u32(self, value: int) -> "CanonicalWriter":
        self._parts.append(struct.pack(">I", value))
        return self

    def u64(self, value: int) -> "CanonicalWriter":
        self._parts.append(struct.pack(">Q", value))
        return self

    def i64(self, value: int) -> "CanonicalWriter":
        if not INT64_MIN <= value <= INT64_MAX:
            raise ValueError(f"integer {value} does not fit in 64 bits")
        self._parts.append(struct.pack(">q", value))
        return self

    def f64(self, value: float) -> "CanonicalWriter":
        self._parts.append(struct.pack(">d", value))
        return self

    def raw(self, data: bytes) -> "CanonicalWriter":
        self._parts.append(bytes(data))
        return self

    def blob(self, data: bytes) -> "CanonicalWriter":
        if len(data) > MAX_FIELD_BYTES:
            raise ValueError(f"field of {len(data)} bytes exceeds {MAX_FIELD_BYTES}")
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def text(self, value: str) -> "CanonicalWriter":
        return self.blob(value.encode("utf-8"))

    def value(self, value: Any) -> "CanonicalWriter":
        # bool before int: bool is an int subclass
        if value is None:
            self.u8(TAG_NONE)
        elif isinstance(value, bool):
            self.u8(TAG_BOOL).u8(1 if value else 0)
        elif isinstance(value, int):
            self.u8(TAG_INT).i64(value)
        elif isinstance(value, float):
            self.u8(TAG_FLOAT).f64(value)
        elif isinstance(value, str):
            self.u8(TAG_STR).text(value)
        elif isinstance(value, (bytes, bytearray)):
            self.u8(TAG_BYTES).blob(bytes(value))
        elif isinstance(value, (list, tuple)):
            self.u8(TAG_LIST).u32(len(value))
            for item in value:
                self.value(item)
        elif isinstance(value, dict):
            self.u8(TAG_DICT).u32(len(value))
            for key in sorted(value, key=str):
                self.text(str(key))
                self.value(value[key])
        else:
            raise TypeError(f"cannot canonically encode {type(value).__name__}")
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class CanonicalReader:
    def __init__(self, data: bytes, position: int = 0):
        self.data = bytes(data)
        self.position = position

    @property
    def remaining(self) -> int:
        return len(self.data) - self.position

    def _take(self, size: int) -> bytes:
        if size < 0 or self.position + size > len(self.data):
            raise CanonicalDecodeError(self.position, "truncated input")
        chunk = self.data[self.position:self.position + size]
        self.position += size
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def raw(self, size: int) -> bytes:
        return self._take(size)

    def blob(self) -> bytes:
        size = self.u32()
        if size > MAX_FIELD_BYTES:
            raise CanonicalDecodeError(self.position, f"field length {size} too large")
        return self._take(size)

    def text(self) -> str:
        start = self.position
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError:
            raise CanonicalDecodeError(start, "invalid UTF-8 text")

    def value(self) -> Any:
        start = self.position
        tag = self.u8()
        if tag == TAG_NONE:
            return None
        if tag == TAG_BOOL:
            flag = self.u8()
            if flag not in (0, 1):
                raise CanonicalDecodeError(start, "invalid boolean")
            return flag == 1
        if tag == TAG_INT:
            return self.i64()
        if tag == TAG_FLOAT:
            return self.f64()
        if tag == TAG_STR:
            return self.text()
        if tag == TAG_BYTES:
            return self.blob()
        if tag == TAG_LIST:
            return [self.value() for _ in range(self.u32())]
        if tag == TAG_DICT:
            count = self.u32()
            result = {}
            for _ in range(count):
                key = self.text()
                result[key] = self.value()
            return result
        raise CanonicalDecodeError(start, f"unknown value tag {tag}")

    def expect_end(self) -> None:
        if self.remaining:
            raise CanonicalDecodeError(self.position, f"{self.remaining} trailing bytes")


def encode_value(value: Any) -> bytes:
    return CanonicalWriter().value(value).getvalue()


def decode_value(data: bytes) -> Any:
    reader = CanonicalReader(data)
    value = reader.value()
    reader.expect_end()
    return value


def values_equal(left: Any, right: Any) -> bool:
    """Exact equality through the canonical encoding (1 != 1.0, True != 1)"""
    return encode_value(left) == encode_value(right)
