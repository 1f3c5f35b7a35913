"""MSB-first bit writer/reader with exp-Golomb codes."""

from __future__ import annotations

import numpy as np


class BitstreamError(ValueError):
    """Malformed, truncated or out-of-range bitstream content."""


MAX_UE_PREFIX = 32


class BitWriter:
    def __init__(self):
        self._buf = bytearray()
        self._acc = 0
        self._nacc = 0

    def write(self, value: int, nbits: int):
        if nbits < 0 or value < 0 or value >> nbits:
            raise ValueError(f"{value} does not fit in {nbits} bits")
        self._acc = (self._acc << nbits) | value
        self._nacc += nbits
        while self._nacc >= 8:
            self._nacc -= 8
            self._buf.append((self._acc >> self._nacc) & 0xFF)
        self._acc &= (1 << self._nacc) - 1

    def write_bit(self, bit: int):
        self.write(1 if bit else 0, 1)

    def write_ue(self, value: int):
        if value < 0:
            raise ValueError("ue value must be nonnegative")
        v = value + 1
        self.write(v, 2 * v.bit_length() - 1)

    def write_se(self, value: int):
        self.write_ue(2 * value - 1 if value > 0 else -2 * value)

    def align(self):
        if self._nacc:
            self.write(0, 8 - self._nacc)

    @property
    def bit_count(self) -> int:
        return 8 * len(self._buf) + self._nacc

    def getvalue(self) -> bytes:
        """Bytes written so far, zero-padded to a byte boundary."""
        if self._nacc:
            return bytes(self._buf) + bytes([(self._acc << (8 - self._nacc)) & 0xFF])
        return bytes(self._buf)


class BitReader:
    def __init__(self, data: bytes, nbits: int | None = None):
        self._data = bytes(data)
        self._pos = 0
        self._end = 8 * len(self._data) if nbits is None else nbits

    @property
    def position(self) -> int:
        return self._pos

    @property
    def bits_left(self) -> int:
        return self._end - self._pos

    def read(self, nbits: int) -> int:
        if nbits > self.bits_left:
            raise BitstreamError(f"truncated stream: need {nbits} bits at {self._pos}, "
                                 f"{self.bits_left} left")
        value = 0
        for _ in range(nbits):
            byte = self._data[self._pos >> 3]
            value = (value << 1) | ((byte >> (7 - (self._pos & 7))) & 1)
            self._pos += 1
        return value

    def read_bit(self) -> int:
        return self.read(1)

    def read_ue(self) -> int:
        zeros = 0
        while self.read(1) == 0:
            zeros += 1
            if zeros > MAX_UE_PREFIX:
                raise BitstreamError("exp-Golomb prefix too long")
        return ((1 << zeros) | self.read(zeros)) - 1

    def read_se(self) -> int:
        k = self.read_ue()
        return (k + 1) // 2 if k & 1 else -(k // 2)

    def align(self):
        self._pos = min(self._end, (self._pos + 7) & ~7)


def ue_bits(value):
    """Length of the ue(v) codeword; works elementwise on integer arrays."""
    if isinstance(value, (int, np.integer)):
        return 2 * (int(value) + 1).bit_length() - 1
    _, exp = np.frexp(np.asarray(value, dtype=np.float64) + 1)
    return 2 * exp.astype(np.int64) - 1


def se_bits(value):
    if isinstance(value, (int, np.integer)):
        v = int(value)
        return ue_bits(2 * v - 1 if v > 0 else -2 * v)
    v = np.asarray(value, dtype=np.int64)
    return ue_bits(np.where(v > 0, 2 * v - 1, -2 * v))
