"""Decoder: rebuilds the tonal and transient layers and synthesises the residual."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..bitio import BitReader
from ..errors import BitstreamError
from ..simgen import make_rng
from ..transforms import MdctGrid, Signal, WaveletTree, dwt_inverse, mdct_inverse
from .bitstream import SECTIONS, Bitstream
from .config import thread_count
from .lpc import LpcSynth
from .sections import (frequency_weights, read_lpc, read_params, read_tonal_coeffs, read_tonal_map,
                       read_transient_coeffs, read_transient_maps)

__all__ = ["DecodedLayers", "decode", "decode_layers"]


@dataclass
class DecodedLayers:
    tonal: Signal
    transient: Signal
    residual: Signal
    tonal_mask: np.ndarray
    transient_maps: list

    @property
    def signal(self) -> Signal:
        return Signal(self.tonal.samples + self.transient.samples + self.residual.samples,
                      self.tonal.sample_rate)


def _section(payload: bytes, name: str, index: int, fn):
    reader = BitReader.from_bytes(payload)
    try:
        return fn(reader)
    except BitstreamError:
        raise
    except (EOFError, ValueError, IndexError) as exc:
        raise BitstreamError(f"superframe {index}: {exc}", name) from exc


def _decode_superframe(header, index: int, sections):
    ell, J = header.window_length, header.depth
    k0 = index * header.superframe_windows
    K = min(header.frame_count, k0 + header.superframe_windows) - k0
    params = _section(sections[0], SECTIONS[0], index, lambda r: read_params(r, K, J))
    N = params.band_count
    if N > ell:
        raise BitstreamError("band count exceeds window length", SECTIONS[0])
    flags = params.flags
    weights = frequency_weights(N, params.n0, flags.normalize and params.tonal is not None)
    mask = _section(sections[1], SECTIONS[1], index, lambda r: read_tonal_map(r, K, N, params.tonal))
    tonal = _section(sections[2], SECTIONS[2], index,
                     lambda r: read_tonal_coeffs(r, mask, params.tonal, weights, flags))
    maps = _section(sections[3], SECTIONS[3], index, lambda r: read_transient_maps(r, K, J))
    for t, m in enumerate(maps):
        if params.trees[t // params.tree_group] is None and len(m):
            raise BitstreamError("non-empty tree map in a group without parameters", SECTIONS[3])
    scaling, details = _section(
        sections[4], SECTIONS[4], index,
        lambda r: read_transient_coeffs(r, maps, params.trees, params.tree_group, J, flags))
    frames = np.stack([dwt_inverse(WaveletTree(s, tuple(d))) for s, d in zip(scaling, details)])
    lpc = _section(sections[5], SECTIONS[5], index, lambda r: read_lpc(r, K, params.lpc_order))
    return N, tonal, mask, frames, maps, lpc


def decode_layers(data: bytes) -> DecodedLayers:
    """Decode ``data`` into its three layers."""
    stream = Bitstream.from_bytes(data)
    header = stream.header
    K, ell = header.frame_count, header.window_length
    length = header.signal_length
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        parts = list(pool.map(lambda a: _decode_superframe(header, a[0], a[1]),
                              enumerate(stream.superframes)))
    bands = {p[0] for p in parts}
    if len(bands) > 1:
        raise BitstreamError("band count changes between superframes", SECTIONS[0])
    N = bands.pop() if bands else ell
    grid = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, N))
    mask = np.concatenate([p[2] for p in parts]) if parts else np.zeros((0, N), dtype=bool)
    tonal = mdct_inverse(MdctGrid(grid, ell, length, header.sample_rate)).samples
    trans = np.concatenate([p[3] for p in parts]).ravel()[:length] if parts else np.zeros(0)
    maps = [m for p in parts for m in p[4]]

    residual = np.zeros(K * ell)
    lpc = [f for p in parts for f in p[5]]
    synth = None
    for k, (refl, gain) in enumerate(lpc):
        if synth is None or synth.order != len(refl):
            synth = LpcSynth(len(refl))
        excitation = make_rng(header.seed, k).standard_normal(ell)
        residual[k * ell:(k + 1) * ell] = synth.run(refl, gain, excitation)
    rate = header.sample_rate
    return DecodedLayers(Signal(tonal, rate), Signal(trans, rate), Signal(residual[:length], rate),
                         mask, maps)


def decode(data: bytes) -> Signal:
    """Decode ``data`` to a signal (tonal + transient + synthesised residual)."""
    return decode_layers(data).signal
