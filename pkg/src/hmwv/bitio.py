"""MSB-first bit packing used by every bitstream section."""

from __future__ import annotations

import numpy as np

__all__ = ["BitWriter", "BitReader"]


class BitWriter:
    def __init__(self):
        self._bits: list[int] = []

    def __len__(self):
        return len(self._bits)

    def write_bit(self, bit: int) -> None:
        self._bits.append(1 if bit else 0)

    def write_uint(self, value: int, width: int) -> None:
        if width == 0:
            return
        if not 0 <= value < (1 << width):
            raise ValueError(f"{value} does not fit in {width} bits")
        for shift in range(width - 1, -1, -1):
            self._bits.append((value >> shift) & 1)

    def write_unary(self, count: int) -> None:
        """``count`` ones followed by a zero."""
        self._bits.extend([1] * count)
        self._bits.append(0)

    def write_bits(self, bits) -> None:
        self._bits.extend(int(b) & 1 for b in bits)

    def bits(self) -> np.ndarray:
        return np.array(self._bits, dtype=np.uint8)

    def to_bytes(self) -> bytes:
        return np.packbits(np.array(self._bits, dtype=np.uint8)).tobytes()


class BitReader:
    def __init__(self, bits: np.ndarray, limit: int | None = None):
        self._bits = bits
        self._pos = 0
        self._limit = len(bits) if limit is None else limit

    @classmethod
    def from_bytes(cls, data: bytes, bit_count: int | None = None) -> "BitReader":
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
        return cls(bits, bit_count)

    @classmethod
    def from_bits(cls, bits) -> "BitReader":
        return cls(np.asarray(bits, dtype=np.uint8))

    @property
    def position(self) -> int:
        return self._pos

    def remaining(self) -> int:
        return self._limit - self._pos

    def read_bit(self) -> int:
        if self._pos >= self._limit:
            raise EOFError("bitstream exhausted")
        b = int(self._bits[self._pos])
        self._pos += 1
        return b

    def read_uint(self, width: int) -> int:
        if self._pos + width > self._limit:
            raise EOFError("bitstream exhausted")
        value = 0
        for b in self._bits[self._pos:self._pos + width]:
            value = (value << 1) | int(b)
        self._pos += width
        return value

    def read_unary(self, limit: int | None = None) -> int:
        count = 0
        while self.read_bit():
            count += 1
            if limit is not None and count > limit:
                raise ValueError("unary code exceeds limit")
        return count
