"""Tonal/transient balance from logarithmic dimensions in the MDCT and wavelet bases."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .transforms import Signal, dwt_forward, mdct_forward

__all__ = [
    "EULER_GAMMA",
    "LEMMA_CONSTANT",
    "LOG_CHI2_MEAN",
    "BalanceReport",
    "ParsevalWeights",
    "log_dimension",
    "estimate_sizes",
    "indices",
    "analyze_frame",
    "balance_profile",
    "parseval_weights",
    "expected_logdim",
    "expected_logdim_bounds",
    "split_budget",
]

EULER_GAMMA = 0.5772156649015329
# often quoted as the Gaussian log-dimension offset; the true offset is its negative
LEMMA_CONSTANT = 1.0 + EULER_GAMMA / math.log(2.0)
# E[log2 Z**2] for a standard normal Z, i.e. (digamma(1/2) + ln 2) / ln 2
LOG_CHI2_MEAN = -1.0 - EULER_GAMMA / math.log(2.0)


@dataclass(frozen=True)
class BalanceReport:
    log_dim_psi: float
    log_dim_w: float
    size_psi: float
    size_w: float
    index_tonal: float
    index_transient: float


@dataclass(frozen=True)
class ParsevalWeights:
    weights: np.ndarray
    redundancy: float


def log_dimension(coeffs, floor: float | None = None) -> float:
    """Mean of ``log2 |c|**2``; squared values are floored at ``floor``.

    The default floor is ``1e-30 * ||c||**2 / N`` so the result is scale
    equivariant.  An all-zero vector has no scale and is rejected.
    """
    c = np.asarray(coeffs, dtype=float).ravel()
    if c.size == 0:
        raise ValueError("empty coefficient vector")
    sq = c * c
    if floor is None:
        total = sq.sum()
        if total == 0.0:
            raise DegenerateInputError("all-zero coefficients")
        floor = 1e-30 * total / c.size
    return float(np.mean(np.log2(np.maximum(sq, floor))))


def indices(size_psi: float, size_w: float):
    """``(I_ton, I_tr)`` from the two size estimates."""
    total = size_psi + size_w
    if total <= 0:
        raise ValueError("both size estimates are zero")
    ton = size_psi / total
    return ton, 1.0 - ton


def _frame_coeffs(frame: np.ndarray, wavelet: str):
    n = frame.shape[0]
    floor = 1e-30 * float(frame @ frame) / n
    if floor == 0.0:
        raise DegenerateInputError("all-zero analysis window")
    wav = dwt_forward(frame, wavelet=wavelet).flat()
    mdct = mdct_forward(frame, n).coeffs.ravel()
    return wav, mdct, floor


def estimate_sizes(frame, wavelet: str = "db8"):
    """``(N_psi, N_w) = (2**D_wavelet, 2**D_mdct)`` on one frame.

    The MDCT uses a single window as long as the frame, so both bases span
    the same space.  The frame length must be a power of two.
    """
    x = np.asarray(frame.samples if isinstance(frame, Signal) else frame, dtype=float)
    wav, mdct, floor = _frame_coeffs(x, wavelet)
    return 2.0 ** log_dimension(wav, floor), 2.0 ** log_dimension(mdct, floor)


def analyze_frame(frame, wavelet: str = "db8") -> BalanceReport:
    x = np.asarray(frame.samples if isinstance(frame, Signal) else frame, dtype=float)
    wav, mdct, floor = _frame_coeffs(x, wavelet)
    d_psi = log_dimension(wav, floor)
    d_w = log_dimension(mdct, floor)
    n_psi, n_w = 2.0**d_psi, 2.0**d_w
    ton, tr = indices(n_psi, n_w)
    return BalanceReport(d_psi, d_w, n_psi, n_w, ton, tr)


def balance_profile(signal, frame_length: int = 1024, hop: int | None = None,
                    wavelet: str = "db8"):
    """Indices on sliding windows (50% overlap by default).

    Returns rows ``(time_seconds, I_ton, I_tr)``; silent windows give NaN.
    """
    if isinstance(signal, Signal):
        x, rate = signal.samples, signal.sample_rate
    else:
        x, rate = np.asarray(signal, dtype=float), 44100
    hop = frame_length // 2 if hop is None else hop
    if x.shape[0] < frame_length:
        x = np.concatenate([x, np.zeros(frame_length - x.shape[0])])
    rows = []
    for start in range(0, x.shape[0] - frame_length + 1, hop):
        frame = x[start:start + frame_length]
        centre = (start + frame_length / 2) / rate
        try:
            rep = analyze_frame(frame, wavelet)
            rows.append((centre, rep.index_tonal, rep.index_transient))
        except DegenerateInputError:
            rows.append((centre, float("nan"), float("nan")))
    return rows


def parseval_weights(map_indices, analysis_basis: np.ndarray, synthesis_basis: np.ndarray
                     ) -> ParsevalWeights:
    """``p_l = sum_{d in map} <w_d, psi_l>**2`` for every column ``psi_l`` of ``analysis_basis``.

    ``map_indices`` selects columns of ``synthesis_basis``.  The redundancy
    is the largest weight (0 for an empty map); restrict it to a second map
    by indexing ``weights`` if needed.
    """
    A = np.asarray(analysis_basis, dtype=float)
    S = np.asarray(synthesis_basis, dtype=float)
    if A.ndim != 2 or A.shape != S.shape or A.shape[0] != A.shape[1]:
        raise ValueError("bases must be square matrices of the same dimension")
    idx = np.asarray(map_indices, dtype=int)
    if idx.size == 0:
        w = np.zeros(A.shape[1])
    else:
        w = ((S[:, idx].T @ A) ** 2).sum(axis=0)
    w = np.clip(w, 0.0, 1.0)
    return ParsevalWeights(w, float(w.max()) if idx.size else 0.0)


def _on_mask(on_map, n):
    on_map = np.asarray(on_map)
    if on_map.dtype == bool:
        if on_map.shape != (n,):
            raise ValueError("map mask has the wrong length")
        return on_map
    mask = np.zeros(n, dtype=bool)
    mask[on_map.astype(int)] = True
    return mask


def expected_logdim(sigma: float, sigma_tilde: float, on_map, weights,
                    offset: float = LOG_CHI2_MEAN) -> float:
    """Exact ``E[D_Psi]`` under the hybrid model with i.i.d. significant coefficients.

    The analysis coefficient ``l`` has variance ``sigma**2 [l in map] +
    sigma_tilde**2 p_l``; ``offset`` is the mean of ``log2`` of a unit
    chi-square variable.
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=float)
    on = _on_mask(on_map, w.shape[0])
    var = sigma_tilde**2 * w + np.where(on, sigma**2, 0.0)
    with np.errstate(divide="ignore"):
        return float(offset + np.mean(np.log2(var)))


def expected_logdim_bounds(sigma: float, sigma_tilde: float, on_map, weights,
                           offset: float = LOG_CHI2_MEAN):
    """Lower and upper bounds on ``E[D_Psi]``.

    ``on_map`` marks the analysis indices carrying a significant coefficient
    of variance ``sigma**2`` (mask or index array); ``weights`` are the
    Parseval weights of every analysis index against the other layer's map.
    The on-map leakage is bounded below by zero and above by the relative
    redundancy (largest on-map weight).
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=float)
    N = w.shape[0]
    on = _on_mask(on_map, N)
    size = int(on.sum())
    off_w = w[~on]
    if np.any(off_w <= 0) or sigma_tilde <= 0 or (size and sigma <= 0):
        raise DegenerateInputError("zero Parseval weight or zero deviation: bounds are -inf")
    eps = float(w[on].max()) if size else 0.0
    base = offset + float(np.sum(np.log2(sigma_tilde**2 * off_w))) / N
    if not size:
        return base, base
    lower = base + size / N * math.log2(sigma**2)
    upper = base + size / N * math.log2(sigma**2 + eps * sigma_tilde**2)
    return float(lower), float(upper)


def split_budget(total_bits: int, report, floor: float = 0.05):
    """Split ``total_bits`` between the tonal and transient layers.

    ``report`` is a :class:`BalanceReport` or a bare tonal index.  Each
    layer gets at least ``floor`` of the total.
    """
    if total_bits <= 0:
        raise ValueError("total bit budget must be positive")
    ton = report.index_tonal if isinstance(report, BalanceReport) else float(report)
    ton = min(max(ton, floor), 1.0 - floor)
    tonal = int(round(ton * total_bits))
    return tonal, int(total_bits) - tonal
