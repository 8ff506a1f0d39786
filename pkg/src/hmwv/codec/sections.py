"""Payload layouts shared by the encoder and the decoder.

Everything the decoder needs to rebuild quantizer settings (bit depths,
Golomb parameters) is derived from the dequantized model parameters and the
coded maps, so both sides call the same functions on the same inputs.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass

import numpy as np

from ..bitalloc import waterfill
from ..bitio import BitReader, BitWriter
from ..tonal import TonalParams
from ..transient import TransientMap, TreeParams, read_tree_map, write_tree_map
from .bitstream import (PROB_BITS, SIGMA_BITS, decode_prob, decode_reflection, decode_sigma,
                        encode_prob, encode_reflection, encode_sigma)
from .entropy import read_runlengths, write_runlengths
from .quant import RANGE, dequantize, dequantize_lloyd, quantize, quantize_lloyd

__all__ = ["Flags", "SuperframeParams", "write_params", "read_params", "quantize_tonal_params",
           "quantize_tree_params", "integer_rates", "frequency_weights", "write_tonal_map",
           "read_tonal_map", "tonal_rates", "write_tonal_coeffs", "read_tonal_coeffs",
           "write_transient_maps", "read_transient_maps", "transient_rates",
           "write_transient_coeffs", "read_transient_coeffs", "write_lpc", "read_lpc",
           "GAIN_BITS", "REFLECTION_BITS", "max_coef_bits", "tonal_coeff_overhead",
           "transient_coeff_overhead", "range_exponent", "RANGE_BITS"]

GAIN_BITS = 12
REFLECTION_BITS = 8
_TONAL_PROB = (1, (1 << PROB_BITS) - 2)


@dataclass(frozen=True)
class Flags:
    decay: bool = True
    tied: bool = True
    lloyd_max: bool = False
    normalize: bool = False
    quantized: bool = True
    geometric: bool = False

    def pack(self) -> int:
        return (self.decay | self.tied << 1 | self.lloyd_max << 2 | self.normalize << 3
                | self.quantized << 4 | self.geometric << 5)

    @classmethod
    def unpack(cls, v: int) -> "Flags":
        return cls(*(bool(v >> i & 1) for i in range(6)))


@dataclass(frozen=True)
class SuperframeParams:
    band_count: int
    flags: Flags
    lpc_order: int
    tonal: TonalParams | None
    n0: float
    alpha: float
    tree_group: int
    trees: tuple  # TreeParams or None per group


def max_coef_bits(flags: Flags) -> int:
    return 10 if flags.lloyd_max else 20


def _f32(value: float) -> float:
    return float(np.float32(value))


def _write_f32(w: BitWriter, value: float) -> None:
    w.write_uint(struct.unpack("<I", struct.pack("<f", value))[0], 32)


def _read_f32(r: BitReader) -> float:
    return struct.unpack("<f", struct.pack("<I", r.read_uint(32)))[0]


def _write_f64(w: BitWriter, value: float) -> None:
    w.write_uint(struct.unpack("<Q", struct.pack("<d", value))[0], 64)


def _read_f64(r: BitReader) -> float:
    return struct.unpack("<d", struct.pack("<Q", r.read_uint(64)))[0]


def _sigma_pair_codes(st, sr):
    ct, cr = encode_sigma(st), encode_sigma(sr)
    cr = max(cr, 1)
    if ct <= cr:
        ct = cr + 1
    return ct, cr


# --------------------------------------------------------------------------
# parameters


def quantize_tonal_params(params: TonalParams, flags: Flags, n0: float, alpha: float):
    """Round ``params`` to their coded values; returns ``(codes, dequantized params)``."""
    N = params.band_count
    lo, hi = _TONAL_PROB
    if flags.tied:
        pt_c = np.array([encode_prob(params.pi_t[0], lo, hi)])
        pr_c = np.array([encode_prob(params.pi_r[0], lo, hi)])
    else:
        pt_c = encode_prob(params.pi_t, lo, hi)
        pr_c = encode_prob(params.pi_r, lo, hi)
    pt = np.broadcast_to(decode_prob(pt_c), (N,))
    pr = np.broadcast_to(decode_prob(pr_c), (N,))
    if flags.decay:
        ct, cr = _sigma_pair_codes(params.decay.sigma_t, params.decay.sigma_r)
        sig_c = (np.array([ct]), np.array([cr]))
        q = TonalParams.from_decay(N, pt, pr, decode_sigma(ct), decode_sigma(cr), _f32(n0), _f32(alpha))
    else:
        pairs = [_sigma_pair_codes(a, b) for a, b in zip(params.sigma_t, params.sigma_r)]
        sig_c = (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
        q = TonalParams.stationary(pt, pr, [decode_sigma(c) for c in sig_c[0]],
                                   [decode_sigma(c) for c in sig_c[1]])
    return (pt_c, pr_c, sig_c), q


def quantize_tree_params(params: TreeParams):
    nu_c = encode_prob(params.nu)
    pi_c = encode_prob(params.pi)
    pairs = [_sigma_pair_codes(a, b) for a, b in zip(params.sigma_t, params.sigma_r)]
    q = TreeParams(decode_prob(nu_c), decode_prob(pi_c), [decode_sigma(p[0]) for p in pairs],
                   [decode_sigma(p[1]) for p in pairs], params.geometric)
    return (nu_c, pi_c, pairs), q


def write_params(w: BitWriter, band_count: int, flags: Flags, lpc_order: int, tonal_codes,
                 n0: float, alpha: float, tree_group: int, tree_codes) -> None:
    w.write_uint(band_count, 16)
    w.write_uint(flags.pack(), 8)
    w.write_uint(lpc_order, 8)
    w.write_bit(tonal_codes is not None)
    if tonal_codes is not None:
        pt_c, pr_c, (st_c, sr_c) = tonal_codes
        for a, b in zip(pt_c, pr_c):
            w.write_uint(int(a), PROB_BITS)
            w.write_uint(int(b), PROB_BITS)
        for a, b in zip(st_c, sr_c):
            w.write_uint(int(a), SIGMA_BITS)
            w.write_uint(int(b), SIGMA_BITS)
        _write_f32(w, n0)
        _write_f32(w, alpha)
    w.write_uint(tree_group, 8)
    for codes in tree_codes:
        w.write_bit(codes is not None)
        if codes is None:
            continue
        nu_c, pi_c, pairs = codes
        w.write_uint(int(nu_c), PROB_BITS)
        w.write_uint(int(pi_c), PROB_BITS)
        for a, b in pairs:
            w.write_uint(int(a), SIGMA_BITS)
            w.write_uint(int(b), SIGMA_BITS)


def read_params(r: BitReader, window_count: int, depth: int) -> SuperframeParams:
    N = r.read_uint(16)
    flags = Flags.unpack(r.read_uint(8))
    order = r.read_uint(8)
    tonal = None
    n0 = alpha = 0.0
    if N == 0:
        raise ValueError("zero band count")
    if r.read_bit():
        nprob = 1 if flags.tied else N
        codes = np.array([[r.read_uint(PROB_BITS), r.read_uint(PROB_BITS)] for _ in range(nprob)])
        if np.any(codes < _TONAL_PROB[0]) or np.any(codes > _TONAL_PROB[1]):
            raise ValueError("tonal persistence code out of range")
        pt = np.broadcast_to(decode_prob(codes[:, 0]), (N,))
        pr = np.broadcast_to(decode_prob(codes[:, 1]), (N,))
        nsig = 1 if flags.decay else N
        sig = np.array([[r.read_uint(SIGMA_BITS), r.read_uint(SIGMA_BITS)] for _ in range(nsig)])
        if np.any(sig[:, 0] <= sig[:, 1]) or np.any(sig[:, 1] == 0):
            raise ValueError("tonal deviation codes out of order")
        n0 = _read_f32(r)
        alpha = _read_f32(r)
        if flags.decay:
            if not (n0 > 0 and alpha > 0):
                raise ValueError("bad decay parameters")
            tonal = TonalParams.from_decay(N, pt, pr, decode_sigma(int(sig[0, 0])),
                                           decode_sigma(int(sig[0, 1])), n0, alpha)
        else:
            tonal = TonalParams.stationary(pt, pr, [decode_sigma(int(c)) for c in sig[:, 0]],
                                           [decode_sigma(int(c)) for c in sig[:, 1]])
    group = r.read_uint(8)
    if group == 0:
        raise ValueError("zero tree group size")
    trees = []
    for _ in range(-(-window_count // group)):
        if not r.read_bit():
            trees.append(None)
            continue
        nu = decode_prob(r.read_uint(PROB_BITS))
        pi = decode_prob(r.read_uint(PROB_BITS))
        sig = np.array([[r.read_uint(SIGMA_BITS), r.read_uint(SIGMA_BITS)] for _ in range(depth)])
        if np.any(sig[:, 0] <= sig[:, 1]) or np.any(sig[:, 1] == 0):
            raise ValueError("tree deviation codes out of order")
        trees.append(TreeParams(nu, pi, [decode_sigma(int(c)) for c in sig[:, 0]],
                                [decode_sigma(int(c)) for c in sig[:, 1]], flags.geometric))
    return SuperframeParams(N, flags, order, tonal, n0, alpha, group, tuple(trees))


# --------------------------------------------------------------------------
# allocation


def integer_rates(weights, variances, budget: int, max_bits: int) -> np.ndarray:
    """Integer bit depths with ``sum w R <= budget``.

    Starts from the floor of the water-filling solution and spends what is
    left one bit at a time on the group with the largest distortion drop.
    """
    w = np.asarray(weights, dtype=np.int64)
    v = np.asarray(variances, dtype=float)
    rates = np.zeros(w.shape, dtype=np.int64)
    usable = (w > 0) & (v > 0)
    if budget <= 0 or not np.any(usable):
        return rates
    real = waterfill(np.where(usable, w, 0).astype(float), np.where(usable, v, 0.0), float(budget))
    rates = np.clip(np.floor(real + 1e-9), 0, max_bits).astype(np.int64)
    rates[~usable] = 0
    spent = int(np.sum(w * rates))
    while spent > budget:
        # guards against floating round-up at the boundary
        i = int(np.argmax(np.where(rates > 0, w, -1)))
        rates[i] -= 1
        spent -= int(w[i])
    heap = [(-float(v[i]) * 4.0 ** (-int(rates[i])), int(i)) for i in np.flatnonzero(usable)
            if rates[i] < max_bits]
    heapq.heapify(heap)
    while heap:
        _, i = heapq.heappop(heap)
        if spent + int(w[i]) > budget:
            continue
        rates[i] += 1
        spent += int(w[i])
        if rates[i] < max_bits:
            heapq.heappush(heap, (-float(v[i]) * 4.0 ** (-int(rates[i])), i))
    return rates


def frequency_weights(band_count: int, n0: float, active: bool) -> np.ndarray:
    """Coefficient normalisation ``1 + n / n0`` (all ones when inactive)."""
    if not active:
        return np.ones(band_count)
    return 1.0 + np.arange(band_count) / n0


def _quantizers(flags: Flags):
    return (quantize_lloyd, dequantize_lloyd) if flags.lloyd_max else (quantize, dequantize)


# --------------------------------------------------------------------------
# tonal layer


def write_tonal_map(w: BitWriter, mask: np.ndarray, params: TonalParams | None) -> None:
    """Per bin: one activity bit, then the run-length code of the bin's row."""
    for n in range(mask.shape[1]):
        row = mask[:, n]
        active = bool(row.any())
        w.write_bit(active)
        if active:
            write_runlengths(w, row, params.pi_t[n], params.pi_r[n])


def read_tonal_map(r: BitReader, K: int, N: int, params: TonalParams | None) -> np.ndarray:
    mask = np.zeros((K, N), dtype=bool)
    for n in range(N):
        if r.read_bit():
            if params is None:
                raise ValueError("tonal map present without tonal parameters")
            mask[:, n] = read_runlengths(r, K, params.pi_t[n], params.pi_r[n])
    return mask


def tonal_map_bits(mask: np.ndarray, params: TonalParams) -> int:
    w = BitWriter()
    write_tonal_map(w, mask, params)
    return len(w)


# Range exponents: each quantizer scale is the model deviation times
# 2**(e/2), with e sent in RANGE_BITS so that the largest coefficient of the
# group falls inside the +-4 sigma range.
RANGE_BITS = 4
RANGE_MIN = -8


def range_exponent(peak: float, base: float) -> int:
    if not (peak > 0 and base > 0):
        return RANGE_MIN
    e = math.ceil(2.0 * math.log2(peak / (0.97 * RANGE * base)))
    return int(min(max(e, RANGE_MIN), RANGE_MIN + (1 << RANGE_BITS) - 1))


def _write_exponents(w: BitWriter, exps) -> None:
    for e in exps:
        w.write_uint(int(e) - RANGE_MIN, RANGE_BITS)


def _read_exponents(r: BitReader, count: int) -> np.ndarray:
    return np.array([r.read_uint(RANGE_BITS) + RANGE_MIN for _ in range(count)], dtype=int)


def tonal_rates(mask, scale, budget: int, flags: Flags):
    counts = mask.sum(axis=0)
    return integer_rates(counts, scale**2, budget, max_coef_bits(flags))


def tonal_scales(mask, values, params: TonalParams, weights) -> np.ndarray:
    """Range exponent of every active bin (encoder side)."""
    base = params.sigma_t / weights
    active = np.flatnonzero(mask.any(axis=0))
    peak = np.abs(np.where(mask, values, 0.0)).max(axis=0)
    return np.array([range_exponent(peak[n], base[n]) for n in active], dtype=int)


def _tonal_scale(mask, params, weights, exps) -> np.ndarray:
    scale = params.sigma_t / weights
    active = np.flatnonzero(mask.any(axis=0))
    scale = scale.copy()
    scale[active] *= 2.0 ** (np.asarray(exps, dtype=float) / 2.0)
    return scale


def write_tonal_coeffs(w: BitWriter, mask, values, params, weights, budget: int, flags: Flags):
    """Returns the dequantized coefficient grid (zero off the map)."""
    out = np.zeros(mask.shape)
    if not flags.quantized:
        w.write_uint(0, 32)
        for k, n in zip(*np.nonzero(mask)):
            _write_f64(w, float(values[k, n]))
            out[k, n] = values[k, n]
        return out
    w.write_uint(budget, 32)
    if params is None:
        return out
    exps = tonal_scales(mask, values, params, weights)
    _write_exponents(w, exps)
    scale = _tonal_scale(mask, params, weights, exps)
    rates = tonal_rates(mask, scale, budget, flags)
    q, dq = _quantizers(flags)
    for k, n in zip(*np.nonzero(mask)):
        bits = int(rates[n])
        if bits:
            idx = q(values[k, n], scale[n], bits)
            w.write_uint(idx, bits)
            out[k, n] = dq(idx, scale[n], bits)
    return out


def tonal_coeff_overhead(mask) -> int:
    """Bits of the tonal coefficient section spent outside the coefficients."""
    return 32 + RANGE_BITS * int(mask.any(axis=0).sum())


def read_tonal_coeffs(r: BitReader, mask, params, weights, flags: Flags) -> np.ndarray:
    out = np.zeros(mask.shape)
    budget = r.read_uint(32)
    if not flags.quantized:
        for k, n in zip(*np.nonzero(mask)):
            out[k, n] = _read_f64(r)
        return out
    if params is None:
        return out
    exps = _read_exponents(r, int(mask.any(axis=0).sum()))
    scale = _tonal_scale(mask, params, weights, exps)
    rates = tonal_rates(mask, scale, budget, flags)
    _, dq = _quantizers(flags)
    for k, n in zip(*np.nonzero(mask)):
        bits = int(rates[n])
        if bits:
            out[k, n] = dq(r.read_uint(bits), scale[n], bits)
    return out


# --------------------------------------------------------------------------
# transient layer


def write_transient_maps(w: BitWriter, maps) -> None:
    for m in maps:
        write_tree_map(w, m)


def read_transient_maps(r: BitReader, count: int, depth: int) -> list[TransientMap]:
    return [read_tree_map(r, depth) for _ in range(count)]


def _transient_counts(maps, group_params, group_size: int) -> np.ndarray:
    G = len(group_params)
    J = maps[0].depth if maps else 0
    counts = np.zeros((G, J), dtype=np.int64)
    for t, m in enumerate(maps):
        g = t // group_size
        if group_params[g] is not None:
            counts[g] += m.counts()
    return counts


def transient_rates(maps, scales, group_size: int, budget: int, flags: Flags, counts=None):
    """Bit depth per ``(group, scale)``; ``scales`` has shape ``(groups, J)``."""
    scales = np.asarray(scales, dtype=float)
    if counts is None:
        counts = np.zeros(scales.shape, dtype=np.int64)
        for t, m in enumerate(maps):
            counts[t // group_size] += m.counts()
    rates = integer_rates(counts.ravel(), (scales**2).ravel(), budget, max_coef_bits(flags))
    return rates.reshape(scales.shape)


def _transient_scales(group_params, counts, exps) -> np.ndarray:
    scales = np.zeros(counts.shape)
    it = iter(exps)
    for g, p in enumerate(group_params):
        if p is None:
            continue
        for j in range(counts.shape[1]):
            if counts[g, j]:
                scales[g, j] = p.sigma_t[j] * 2.0 ** (next(it) / 2.0)
    return scales


def transient_coeff_overhead(maps, group_params, group_size: int) -> int:
    counts = _transient_counts(maps, group_params, group_size)
    return 32 + 32 * len(maps) + RANGE_BITS * int((counts > 0).sum())


def write_transient_coeffs(w: BitWriter, maps, trees, scaling, group_params, group_size: int,
                           budget: int, flags: Flags):
    """Returns dequantized per-tree detail lists."""
    w.write_uint(budget if flags.quantized else 0, 32)
    for s in scaling:
        _write_f32(w, s)
    out = [[np.zeros_like(d) for d in tree.detail] for tree in trees]
    if not flags.quantized:
        for t, m in enumerate(maps):
            for j, k in m.indices():
                v = float(trees[t].detail[j - 1][k])
                _write_f64(w, v)
                out[t][j - 1][k] = v
        return out
    if not maps:
        return out
    counts = _transient_counts(maps, group_params, group_size)
    peak = np.zeros(counts.shape)
    for t, m in enumerate(maps):
        g = t // group_size
        for j, k in m.indices():
            peak[g, j - 1] = max(peak[g, j - 1], abs(trees[t].detail[j - 1][k]))
    exps = [range_exponent(peak[g, j], p.sigma_t[j])
            for g, p in enumerate(group_params) if p is not None
            for j in range(counts.shape[1]) if counts[g, j]]
    _write_exponents(w, exps)
    scales = _transient_scales(group_params, counts, exps)
    rates = transient_rates(maps, scales, group_size, budget, flags, counts)
    q, dq = _quantizers(flags)
    for t, m in enumerate(maps):
        g = t // group_size
        if group_params[g] is None:
            continue
        for j, k in m.indices():
            bits = int(rates[g, j - 1])
            if bits:
                s = scales[g, j - 1]
                idx = q(trees[t].detail[j - 1][k], s, bits)
                w.write_uint(idx, bits)
                out[t][j - 1][k] = dq(idx, s, bits)
    return out


def read_transient_coeffs(r: BitReader, maps, group_params, group_size: int, depth: int,
                          flags: Flags):
    budget = r.read_uint(32)
    scaling = [_read_f32(r) for _ in maps]
    out = [[np.zeros(2 ** (depth - j)) for j in range(1, depth + 1)] for _ in maps]
    if not flags.quantized:
        for t, m in enumerate(maps):
            for j, k in m.indices():
                out[t][j - 1][k] = _read_f64(r)
        return scaling, out
    if not maps:
        return scaling, out
    counts = _transient_counts(maps, group_params, group_size)
    exps = _read_exponents(r, int((counts > 0).sum()))
    scales = _transient_scales(group_params, counts, exps)
    rates = transient_rates(maps, scales, group_size, budget, flags, counts)
    _, dq = _quantizers(flags)
    for t, m in enumerate(maps):
        g = t // group_size
        if group_params[g] is None:
            continue
        for j, k in m.indices():
            bits = int(rates[g, j - 1])
            if bits:
                out[t][j - 1][k] = dq(r.read_uint(bits), scales[g, j - 1], bits)
    return scaling, out


# --------------------------------------------------------------------------
# residual


def _gain_code(gain: float) -> int:
    if not gain > 2.0**-40:
        return 0
    code = int(round((np.log2(gain) + 40.0) * ((1 << GAIN_BITS) - 1) / 80.0))
    return min(max(code, 1), (1 << GAIN_BITS) - 1)


def _gain_value(code: int) -> float:
    if code == 0:
        return 0.0
    return float(2.0 ** (code * 80.0 / ((1 << GAIN_BITS) - 1) - 40.0))


def write_lpc(w: BitWriter, frames):
    """``frames``: sequence of ``(reflection, gain)``; returns the dequantized pairs."""
    out = []
    for k, gain in frames:
        code = _gain_code(gain)
        w.write_uint(code, GAIN_BITS)
        if code == 0:
            out.append((np.zeros(len(k)), 0.0))
            continue
        kc = encode_reflection(k)
        for c in kc:
            w.write_uint(int(c), REFLECTION_BITS)
        out.append((decode_reflection(kc), _gain_value(code)))
    return out


def read_lpc(r: BitReader, count: int, order: int):
    out = []
    for _ in range(count):
        code = r.read_uint(GAIN_BITS)
        if code == 0:
            out.append((np.zeros(order), 0.0))
            continue
        kc = np.array([r.read_uint(REFLECTION_BITS) for _ in range(order)])
        out.append((decode_reflection(kc), _gain_value(code)))
    return out
