"""Golomb run-length coding of binary state rows.

Runs alternate between the two states.  The first state is sent as one bit;
each run length ``L >= 1`` is Golomb-coded as ``L - 1`` with the parameter
matched to the geometric law of that state's segments.  Decoding stops once
the known row length is reached.
"""

from __future__ import annotations

import math

import numpy as np

from ..bitio import BitReader, BitWriter
from ..errors import BitstreamError

__all__ = ["golomb_parameter", "write_golomb", "read_golomb", "write_runlengths",
           "read_runlengths", "encode_runlengths", "decode_runlengths", "run_lengths"]


def golomb_parameter(p: float) -> int:
    """Optimal Golomb parameter for ``Pr{n} = (1 - p) p**n``: ``ceil(log(1 + p) / -log p)``."""
    if p <= 0.0:
        return 1
    if p >= 1.0:
        raise ValueError("persistence 1 has no finite Golomb code")
    return max(1, math.ceil(math.log1p(p) / -math.log(p)))


def write_golomb(writer: BitWriter, n: int, m: int) -> None:
    q, r = divmod(n, m)
    writer.write_unary(q)
    if m == 1:
        return
    b = (m - 1).bit_length()
    cutoff = (1 << b) - m
    if r < cutoff:
        writer.write_uint(r, b - 1)
    else:
        writer.write_uint(r + cutoff, b)


def read_golomb(reader: BitReader, m: int, limit: int | None = None) -> int:
    q = reader.read_unary(None if limit is None else limit // m + 1)
    if m == 1:
        return q
    b = (m - 1).bit_length()
    cutoff = (1 << b) - m
    r = reader.read_uint(b - 1)
    if r >= cutoff:
        r = ((r << 1) | reader.read_bit()) - cutoff
    return q * m + r


def run_lengths(states) -> list[int]:
    s = np.asarray(states, dtype=bool)
    if s.size == 0:
        return []
    edges = np.flatnonzero(s[1:] != s[:-1]) + 1
    bounds = np.concatenate([[0], edges, [s.size]])
    return list(np.diff(bounds).astype(int))


def write_runlengths(writer: BitWriter, states, pi_t: float, pi_r: float) -> None:
    """States are booleans (True for T)."""
    s = np.asarray(states, dtype=bool)
    if s.size == 0:
        return
    m = {True: golomb_parameter(pi_t), False: golomb_parameter(pi_r)}
    writer.write_bit(int(s[0]))
    state = bool(s[0])
    for length in run_lengths(s):
        write_golomb(writer, length - 1, m[state])
        state = not state


def read_runlengths(reader: BitReader, K: int, pi_t: float, pi_r: float) -> np.ndarray:
    out = np.empty(K, dtype=bool)
    if K == 0:
        return out
    m = {True: golomb_parameter(pi_t), False: golomb_parameter(pi_r)}
    try:
        state = bool(reader.read_bit())
        pos = 0
        while pos < K:
            remaining = K - pos
            length = read_golomb(reader, m[state], remaining) + 1
            if length > remaining:
                raise BitstreamError("run overruns the row", "tonal-map")
            out[pos:pos + length] = state
            pos += length
            state = not state
    except (EOFError, ValueError) as exc:
        raise BitstreamError(f"run-length data malformed: {exc}", "tonal-map") from exc
    return out


def encode_runlengths(states, pi_t: float, pi_r: float) -> np.ndarray:
    w = BitWriter()
    write_runlengths(w, states, pi_t, pi_r)
    return w.bits()


def decode_runlengths(bits, K: int, pi_t: float, pi_r: float) -> np.ndarray:
    r = BitReader.from_bits(bits)
    out = read_runlengths(r, K, pi_t, pi_r)
    if r.remaining():
        raise BitstreamError("trailing bits after run-length data", "tonal-map")
    return out
