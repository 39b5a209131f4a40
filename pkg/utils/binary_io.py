"""
Little-endian binary reader/writer for the model, preprocessing and head files.
Every read failure raises FormatError carrying the byte offset.
"""
import struct

import numpy as np

from engine.errors import FormatError


class ByteWriter:
    """Accumulates little-endian fields into a bytes payload."""

    def __init__(self):
        self._parts = []

    def magic(self, tag):
        self._parts.append(tag)

    def pack(self, fmt, *values):
        self._parts.append(struct.pack("<" + fmt, *values))

    def floats(self, array):
        self._parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())

    def getvalue(self):
        return b"".join(self._parts)


class ByteReader:
    """Cursor over a bytes payload."""

    def __init__(self, data):
        self.data = bytes(data)
        self.offset = 0

    def expect_magic(self, tag):
        """Check a magic tag at the cursor."""
        found = self.data[self.offset:self.offset + len(tag)]
        if found != tag:
            raise FormatError(f"bad magic {found!r}, expected {tag!r}", self.offset)
        self.offset += len(tag)

    def unpack(self, fmt):
        """Read one struct format (little-endian) and advance."""
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise FormatError(f"truncated payload: need {size} bytes", self.offset)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values if len(values) > 1 else values[0]

    def floats(self, count, shape=None):
        """Read count float32 values into a writable float32 array."""
        size = 4 * count
        if self.offset + size > len(self.data):
            raise FormatError(f"truncated payload: need {count} floats", self.offset)
        array = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.offset)
        self.offset += size
        array = array.astype(np.float32)
        return array.reshape(shape) if shape is not None else array

    def expect_end(self):
        if self.offset != len(self.data):
            raise FormatError(f"{len(self.data) - self.offset} trailing bytes", self.offset)
