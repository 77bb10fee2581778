"""Little-endian binary file helpers shared by the on-disk formats.

Every serialized artifact starts with a 4-byte magic string and an int32
format version. All integers are little-endian int32, all floating point
payloads little-endian float32, so files round-trip bit-exactly.
"""

import struct

import numpy as np

from .errors import FormatError


class ByteReader:
    """Sequential reader that reports the byte offset of any parse failure."""

    def __init__(self, data: bytes, source: str = "buffer"):
        self.data = data
        self.offset = 0
        self.source = source

    def read(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(
                f"{self.source}: truncated, wanted {n} more bytes", self.offset)
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def expect_magic(self, magic: bytes) -> None:
        at = self.offset
        got = self.read(len(magic))
        if got != magic:
            raise FormatError(
                f"{self.source}: bad magic {got!r}, expected {magic!r}", at)

    def read_i32(self) -> int:
        return struct.unpack("<i", self.read(4))[0]

    def read_f32_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = self.read(4 * count)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)

    def expect_eof(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(
                f"{self.source}: {len(self.data) - self.offset} trailing bytes",
                self.offset)


def pack_i32(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}i", *values)


def pack_f32_array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def check_version(reader: ByteReader, expected: int) -> None:
    at = reader.offset
    version = reader.read_i32()
    if version != expected:
        raise FormatError(
            f"{reader.source}: unsupported format version {version}, "
            f"expected {expected}", at)
