"""Orthonormal analysis/synthesis: MDCT (local cosine) and periodic dyadic DWT.

The MDCT uses the sine bell over a support of two frames (``eta = l/2``) and is
computed by folding followed by an orthonormal DCT-IV.  Frames at the two ends
of the signal use flat outer bells so that the transform is an orthonormal
basis of the zero-padded signal space, without wrap-around.

The DWT is a periodized Daubechies filter bank; coefficients are organised as a
binary tree with scale ``j = 1`` the finest and ``j = J`` the single root node.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.special import comb

__all__ = [
    "Signal",
    "MdctGrid",
    "WaveletTree",
    "sine_bell",
    "mdct_forward",
    "mdct_inverse",
    "mdct_atom",
    "daubechies_filter",
    "dwt_forward",
    "dwt_inverse",
    "dwt_atom",
    "mdct_basis_matrix",
    "dwt_basis_matrix",
]


@dataclass(frozen=True)
class Signal:
    """Real-valued, finite, sampled signal."""

    samples: np.ndarray
    sample_rate: int = 44100

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be a positive integer")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))


@dataclass(frozen=True)
class MdctGrid:
    """MDCT coefficients ``coeffs[k, n]`` (window ``k``, frequency bin ``n``).

    ``signal_length`` is the unpadded length of the analysed signal; the padded
    length is ``window_count * window_length``.
    """

    coeffs: np.ndarray
    window_length: int
    signal_length: int
    sample_rate: int = 44100

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 2:
            raise ValueError("coeffs must be a K x N matrix")
        if c.shape[1] > self.window_length:
            raise ValueError("band count exceeds window length")
        if not 0 <= self.signal_length <= c.shape[0] * self.window_length:
            raise ValueError("signal_length inconsistent with grid size")
        object.__setattr__(self, "coeffs", c)

    @property
    def window_count(self) -> int:
        return self.coeffs.shape[0]

    @property
    def band_count(self) -> int:
        return self.coeffs.shape[1]

    @property
    def pad_length(self) -> int:
        return self.window_count * self.window_length - self.signal_length


@dataclass(frozen=True)
class WaveletTree:
    """Dyadic wavelet coefficient tree of depth ``J``.

    ``detail[j - 1]`` holds the ``2**(J - j)`` coefficients of scale ``j``;
    node ``(j, k)`` has children ``(j - 1, 2k)`` and ``(j - 1, 2k + 1)``.
    """

    scaling_coeff: float
    detail: tuple
    wavelet: str = "db8"

    def __post_init__(self):
        detail = tuple(np.asarray(d, dtype=float) for d in self.detail)
        depth = len(detail)
        if depth < 1:
            raise ValueError("tree must have at least one scale")
        for j, d in enumerate(detail, start=1):
            if d.shape != (2 ** (depth - j),):
                raise ValueError(f"scale {j} must hold {2 ** (depth - j)} coefficients")
        object.__setattr__(self, "detail", detail)
        object.__setattr__(self, "scaling_coeff", float(self.scaling_coeff))

    @property
    def depth(self) -> int:
        return len(self.detail)

    @property
    def node_count(self) -> int:
        return 2**self.depth - 1

    def scale(self, j: int) -> np.ndarray:
        return self.detail[j - 1]

    def flat(self) -> np.ndarray:
        """All detail coefficients, root scale first, followed by the scaling coefficient."""
        return np.concatenate([*self.detail[::-1], [self.scaling_coeff]])

    @classmethod
    def from_flat(cls, values, depth: int, wavelet: str = "db8") -> "WaveletTree":
        values = np.asarray(values, dtype=float)
        if values.shape != (2**depth,):
            raise ValueError("flat coefficient vector must have length 2**depth")
        detail = []
        pos = 0
        for j in range(depth, 0, -1):
            n = 2 ** (depth - j)
            detail.append(values[pos:pos + n])
            pos += n
        return cls(values[-1], tuple(detail[::-1]), wavelet)

    def energy(self) -> float:
        return float(self.scaling_coeff**2 + sum(np.dot(d, d) for d in self.detail))


# --------------------------------------------------------------------------
# MDCT


@functools.lru_cache(maxsize=32)
def sine_bell(window_length: int) -> np.ndarray:
    """Sine bell ``sin(pi (m + 1/2) / 2l)`` over its ``2l``-sample support."""
    m = np.arange(2 * window_length)
    bell = np.sin(np.pi * (m + 0.5) / (2 * window_length))
    bell.setflags(write=False)
    return bell


def _bells(window_length: int, window_count: int) -> np.ndarray:
    half = window_length // 2
    bells = np.tile(sine_bell(window_length), (window_count, 1))
    # flat outer edges at both signal boundaries
    bells[0, :half] = 0.0
    bells[0, half:window_length] = 1.0
    bells[-1, window_length:window_length + half] = 1.0
    bells[-1, window_length + half:] = 0.0
    return bells


def _check_window(window_length: int) -> None:
    if window_length <= 0 or window_length % 2:
        raise ValueError("window length must be a positive even integer")


def mdct_forward(signal, window_length: int = 1024, band_count: int | None = None) -> MdctGrid:
    """Orthonormal MDCT of ``signal`` (zero-padded to a multiple of ``window_length``)."""
    _check_window(window_length)
    if band_count is None:
        band_count = window_length
    if not 0 < band_count <= window_length:
        raise ValueError("band count must lie in 1..window_length")
    if isinstance(signal, Signal):
        x, rate = signal.samples, signal.sample_rate
    else:
        x, rate = np.asarray(signal, dtype=float), 44100
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
    length = x.shape[0]
    count = max(1, -(-length // window_length))
    half = window_length // 2
    padded = np.zeros(count * window_length + window_length)
    padded[half:half + length] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, 2 * window_length)[::window_length]
    h = frames[:count] * _bells(window_length, count)
    folded = h[:, half:half + window_length].copy()
    folded[:, :half] += h[:, :half][:, ::-1]
    folded[:, half:] -= h[:, window_length + half:][:, ::-1]
    coeffs = sfft.dct(folded, type=4, norm="ortho", axis=1)
    return MdctGrid(coeffs[:, :band_count], window_length, length, rate)


def mdct_inverse(grid: MdctGrid) -> Signal:
    """Synthesis from MDCT coefficients; missing high bands are taken as zero."""
    ell = grid.window_length
    _check_window(ell)
    count = grid.window_count
    half = ell // 2
    coeffs = np.zeros((count, ell))
    coeffs[:, :grid.band_count] = grid.coeffs
    folded = sfft.idct(coeffs, type=4, norm="ortho", axis=1)
    g = np.empty((count, 2 * ell))
    g[:, half:half + ell] = folded
    g[:, :half] = folded[:, :half][:, ::-1]
    g[:, ell + half:] = -folded[:, half:][:, ::-1]
    g *= _bells(ell, count)
    out = np.zeros(count * ell + ell)
    for k in range(count):
        out[k * ell:k * ell + 2 * ell] += g[k]
    return Signal(out[half:half + grid.signal_length], grid.sample_rate)


def mdct_atom(k: int, n: int, window_length: int, window_count: int) -> np.ndarray:
    """Synthesised basis function ``w_kn`` on a signal of ``window_count`` frames."""
    coeffs = np.zeros((window_count, window_length))
    coeffs[k, n] = 1.0
    grid = MdctGrid(coeffs, window_length, window_count * window_length)
    return mdct_inverse(grid).samples


# --------------------------------------------------------------------------
# DWT


@functools.lru_cache(maxsize=16)
def daubechies_filter(vanishing_moments: int) -> np.ndarray:
    """Minimum-phase Daubechies scaling filter with ``2 * vanishing_moments`` taps.

    Obtained by spectral factorisation of the Daubechies polynomial; the
    returned taps sum to ``sqrt(2)`` and are orthonormal under even shifts.
    """
    p = int(vanishing_moments)
    if p < 1:
        raise ValueError("need at least one vanishing moment")
    if p == 1:
        h = np.array([1.0, 1.0]) / math.sqrt(2.0)
    else:
        poly = [comb(p - 1 + k, k, exact=True) for k in range(p)]
        y_roots = np.roots(poly[::-1])
        zs = []
        for y in y_roots:
            # z + 1/z = 2 - 4y; keep the root inside the unit circle
            b = 2.0 - 4.0 * y
            r = np.roots([1.0, -b, 1.0])
            zs.append(r[np.argmin(np.abs(r))])
        h = np.real(np.poly(np.concatenate([-np.ones(p), zs])))
        h *= math.sqrt(2.0) / h.sum()
    h.setflags(write=False)
    return h


def _wavelet_taps(wavelet: str) -> np.ndarray:
    name = wavelet.lower()
    if name == "haar":
        return daubechies_filter(1)
    if name.startswith("db") and name[2:].isdigit():
        return daubechies_filter(int(name[2:]))
    raise ValueError(f"unknown wavelet {wavelet!r}")


def _analysis_step(a, h, g):
    m = a.shape[-1]
    idx = (2 * np.arange(m // 2)[:, None] + np.arange(h.size)[None, :]) % m
    blocks = a[..., idx]
    return blocks @ h, blocks @ g


def _synthesis_step(approx, detail, h, g):
    half = approx.shape[-1]
    m = 2 * half
    out = np.zeros(approx.shape[:-1] + (m,))
    for n in range(h.size):
        pos = (2 * np.arange(half) + n) % m
        out[..., pos] += h[n] * approx + g[n] * detail
    return out


def _highpass(h):
    g = h[::-1].copy()
    g[1::2] *= -1
    return g


def dwt_forward(frame, depth: int | None = None, wavelet: str = "db8") -> WaveletTree:
    """Periodic orthonormal DWT of a frame of exactly ``2**depth`` samples."""
    x = np.asarray(frame.samples if isinstance(frame, Signal) else frame, dtype=float)
    length = x.shape[0]
    if length < 2 or length & (length - 1):
        raise ValueError("frame length must be a power of two")
    full = length.bit_length() - 1
    if depth is None:
        depth = full
    if depth != full:
        raise ValueError(f"frame of {length} samples needs depth {full}, got {depth}")
    h = _wavelet_taps(wavelet)
    g = _highpass(h)
    a = x
    detail = []
    for _ in range(depth):
        a, d = _analysis_step(a, h, g)
        detail.append(d)
    return WaveletTree(a[0], tuple(detail), wavelet)


def dwt_inverse(tree: WaveletTree) -> np.ndarray:
    """Exact synthesis of the frame from its coefficient tree."""
    h = _wavelet_taps(tree.wavelet)
    g = _highpass(h)
    a = np.array([tree.scaling_coeff])
    for j in range(tree.depth, 0, -1):
        a = _synthesis_step(a, tree.scale(j), h, g)
    return a


def dwt_atom(j: int, k: int, depth: int, wavelet: str = "db8") -> np.ndarray:
    """Synthesised wavelet ``psi_jk``; ``j = 0`` returns the scaling function."""
    detail = [np.zeros(2 ** (depth - s)) for s in range(1, depth + 1)]
    scaling = 0.0
    if j == 0:
        scaling = 1.0
    else:
        detail[j - 1][k] = 1.0
    return dwt_inverse(WaveletTree(scaling, tuple(detail), wavelet))


def mdct_basis_matrix(frame_length: int, window_length: int | None = None) -> np.ndarray:
    """Columns are the MDCT atoms of a ``frame_length`` space, ordered ``k * l + n``."""
    ell = frame_length if window_length is None else window_length
    if frame_length % ell:
        raise ValueError("frame length must be a multiple of the window length")
    count = frame_length // ell
    eye = np.eye(frame_length).reshape(frame_length, count, ell)
    cols = [mdct_inverse(MdctGrid(e, ell, frame_length)).samples for e in eye]
    return np.stack(cols, axis=1)


def dwt_basis_matrix(depth: int, wavelet: str = "db8") -> np.ndarray:
    """Columns are wavelet atoms in :meth:`WaveletTree.flat` order."""
    n = 2**depth
    cols = [dwt_inverse(WaveletTree.from_flat(e, depth, wavelet)) for e in np.eye(n)]
    return np.stack(cols, axis=1)
