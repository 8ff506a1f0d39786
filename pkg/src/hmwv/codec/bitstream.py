"""Container: fixed little-endian header plus six length-prefixed sections per superframe."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import BitstreamError

__all__ = ["MAGIC", "VERSION", "SECTIONS", "Header", "Bitstream",
           "encode_sigma", "decode_sigma", "encode_prob", "decode_prob",
           "encode_reflection", "decode_reflection", "SIGMA_BITS", "PROB_BITS"]

MAGIC = b"HMWV"
VERSION = 1
SECTIONS = ("params", "tonal-map", "tonal-coeffs", "transient-maps", "transient-coeffs", "lpc")
_HEADER = struct.Struct("<4sBIHBHBII")

SIGMA_BITS = 16
PROB_BITS = 12
_PROB_MAX = (1 << PROB_BITS) - 1


@dataclass(frozen=True)
class Header:
    sample_rate: int
    window_length: int
    depth: int
    pad_length: int
    superframe_windows: int
    frame_count: int
    seed: int

    SIZE = _HEADER.size

    def pack(self) -> bytes:
        return _HEADER.pack(MAGIC, VERSION, self.sample_rate, self.window_length, self.depth,
                            self.pad_length, self.superframe_windows, self.frame_count,
                            self.seed & 0xFFFFFFFF)

    @classmethod
    def unpack(cls, data: bytes) -> "Header":
        if len(data) < _HEADER.size:
            raise BitstreamError("stream shorter than its header", "header")
        magic, version, rate, ell, depth, pad, sfw, count, seed = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BitstreamError("bad magic", "header")
        if version != VERSION:
            raise BitstreamError(f"unsupported version {version}", "header")
        if ell == 0 or ell & (ell - 1) or 2**depth != ell or sfw == 0 or rate == 0:
            raise BitstreamError("inconsistent frame geometry", "header")
        return cls(rate, ell, depth, pad, sfw, count, seed)

    @property
    def superframe_count(self) -> int:
        return -(-self.frame_count // self.superframe_windows)

    @property
    def signal_length(self) -> int:
        return self.frame_count * self.window_length - self.pad_length


@dataclass(frozen=True)
class Bitstream:
    header: Header
    superframes: tuple  # of 6-tuples of bytes

    def to_bytes(self) -> bytes:
        parts = [self.header.pack()]
        for sections in self.superframes:
            for payload in sections:
                parts.append(struct.pack("<I", len(payload)))
                parts.append(payload)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        header = Header.unpack(data)
        pos = Header.SIZE
        superframes = []
        for s in range(header.superframe_count):
            sections = []
            for name in SECTIONS:
                label = f"{name} (superframe {s})"
                if pos + 4 > len(data):
                    raise BitstreamError("section missing", label)
                (size,) = struct.unpack_from("<I", data, pos)
                pos += 4
                if pos + size > len(data):
                    raise BitstreamError("section truncated", label)
                sections.append(bytes(data[pos:pos + size]))
                pos += size
            superframes.append(tuple(sections))
        if pos != len(data):
            raise BitstreamError("trailing bytes after last superframe", "container")
        return cls(header, tuple(superframes))


# --------------------------------------------------------------------------
# scalar parameter codes


def encode_sigma(sigma: float) -> int:
    """16-bit log2 code; 0 encodes an exact zero."""
    if sigma <= 0:
        return 0
    code = int(round((math.log2(sigma) + 64.0) * 512.0))
    return min(max(code, 1), (1 << SIGMA_BITS) - 1)


def decode_sigma(code: int) -> float:
    if code == 0:
        return 0.0
    return float(2.0 ** (code / 512.0 - 64.0))


def encode_prob(p, lo: int = 0, hi: int = _PROB_MAX):
    q = np.clip(np.rint(np.asarray(p, dtype=float) * _PROB_MAX), lo, hi).astype(np.int64)
    return int(q) if q.ndim == 0 else q


def decode_prob(code):
    out = np.asarray(code, dtype=float) / _PROB_MAX
    return float(out) if out.ndim == 0 else out


_REFL_BITS = 8


def encode_reflection(k) -> np.ndarray:
    """8-bit codes of ``asin(k)`` uniformly spread over ``(-pi/2, pi/2)``."""
    levels = 1 << _REFL_BITS
    u = np.arcsin(np.clip(np.asarray(k, dtype=float), -0.999999, 0.999999)) / np.pi + 0.5
    return np.clip(np.floor(u * levels), 0, levels - 1).astype(np.int64)


def decode_reflection(code) -> np.ndarray:
    levels = 1 << _REFL_BITS
    u = (np.asarray(code, dtype=float) + 0.5) / levels
    return np.sin((u - 0.5) * np.pi)
