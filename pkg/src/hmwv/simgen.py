"""Samplers for the tonal chain, the transient tree and the two-basis hybrid model.

All randomness comes from numpy's PCG64 generator seeded through
``SeedSequence``; derived streams use ``(seed, task)`` entropy tuples so
parallel draws are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tonal import TonalMap, TonalParams
from .transforms import MdctGrid, Signal, WaveletTree, dwt_inverse, mdct_inverse
from .transient import TransientMap, TreeParams

__all__ = [
    "SimSpec",
    "make_rng",
    "sample_chains",
    "sample_tree_maps",
    "simulate",
    "simulate_tonal",
    "simulate_transient",
    "simulate_hybrid",
]


def make_rng(seed, *task) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally split by task indices."""
    entropy = (int(seed), *map(int, task)) if task else int(seed)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class SimSpec:
    """Simulation request.

    ``kind`` is ``"tonal"``, ``"transient"`` or ``"hybrid"``.  ``dims`` holds
    ``(K,)`` for tonal (band count comes from the parameters), unused for
    transient, and ``(frame_length,)`` for hybrid, whose ``params`` is a dict
    with keys ``sigma``, ``sigma_tilde``, ``size_lambda``, ``size_delta``.
    """

    kind: str
    params: object
    dims: tuple = ()
    seed: int = 0


def sample_chains(params: TonalParams, K: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``K x N`` state grid, True for T."""
    N = params.band_count
    states = np.empty((K, N), dtype=bool)
    states[0] = rng.random(N) < params.nu
    for k in range(1, K):
        u = rng.random(N)
        states[k] = np.where(states[k - 1], u < params.pi_t, u >= params.pi_r)
    return states


def simulate_tonal(params: TonalParams, K: int, seed: int = 0, window_length: int | None = None,
                   sample_rate: int = 44100):
    """Signal, true tonal map and true coefficients drawn from the chain model."""
    rng = make_rng(seed)
    N = params.band_count
    ell = N if window_length is None else window_length
    states = sample_chains(params, K, rng)
    sigma = np.where(states, params.sigma_t, params.sigma_r)
    coeffs = rng.standard_normal((K, N)) * sigma
    grid = MdctGrid(coeffs, ell, K * ell, sample_rate)
    return mdct_inverse(grid), TonalMap(states), coeffs


def sample_tree_maps(params: TreeParams, count: int, rng: np.random.Generator):
    """``count`` independent state trees as per-scale ``(count, 2**(J-j))`` masks."""
    J = params.depth
    pers = params.persistence()
    masks = [None] * J
    masks[J - 1] = (rng.random(count) < params.nu)[:, None]
    for j in range(J - 1, 0, -1):
        parent = np.repeat(masks[j], 2, axis=1)
        masks[j - 1] = parent & (rng.random(parent.shape) < pers[j - 1])
    return masks


def simulate_transient(params: TreeParams, seed: int = 0, wavelet: str = "db8",
                       scaling_sigma: float = 0.0):
    """Frame, true transient map and true coefficient tree from the tree model."""
    rng = make_rng(seed)
    masks = sample_tree_maps(params, 1, rng)
    detail = []
    for j in range(1, params.depth + 1):
        m = masks[j - 1][0]
        sigma = np.where(m, params.sigma_t[j - 1], params.sigma_r[j - 1])
        detail.append(rng.standard_normal(m.shape) * sigma)
    scaling = scaling_sigma * rng.standard_normal()
    tree = WaveletTree(scaling, tuple(detail), wavelet)
    tmap = TransientMap(tuple(m[0] for m in masks))
    return dwt_inverse(tree), tmap, tree


def simulate_hybrid(sigma: float, sigma_tilde: float, size_lambda: int, size_delta: int,
                    frame_length: int = 1024, seed: int = 0, wavelet: str = "db8"):
    """Sum of a sparse wavelet part and a sparse MDCT part on one frame.

    ``size_lambda`` wavelet coefficients (scaling coefficient included in
    the index set) are ``N(0, sigma**2)`` and ``size_delta`` MDCT
    coefficients of a single frame-long window are ``N(0, sigma_tilde**2)``;
    both maps are uniform without replacement.  Returns the signal and the
    two maps as sorted flat index arrays (wavelet indices in
    :meth:`WaveletTree.flat` order).
    """
    if size_lambda > frame_length or size_delta > frame_length:
        raise ValueError("map sizes cannot exceed the frame length")
    if size_lambda < 0 or size_delta < 0:
        raise ValueError("map sizes must be non-negative")
    depth = frame_length.bit_length() - 1
    if 2**depth != frame_length:
        raise ValueError("frame length must be a power of two")
    rng = make_rng(seed)
    lam = np.sort(rng.choice(frame_length, size_lambda, replace=False))
    delta = np.sort(rng.choice(frame_length, size_delta, replace=False))
    wcoef = np.zeros(frame_length)
    wcoef[lam] = sigma * rng.standard_normal(size_lambda)
    mcoef = np.zeros((1, frame_length))
    mcoef[0, delta] = sigma_tilde * rng.standard_normal(size_delta)
    x = dwt_inverse(WaveletTree.from_flat(wcoef, depth, wavelet))
    x = x + mdct_inverse(MdctGrid(mcoef, frame_length, frame_length)).samples
    return Signal(x), lam, delta


def simulate(spec: SimSpec):
    """Dispatch a :class:`SimSpec` to the matching sampler."""
    if spec.kind == "tonal":
        return simulate_tonal(spec.params, spec.dims[0], spec.seed)
    if spec.kind == "transient":
        return simulate_transient(spec.params, spec.seed)
    if spec.kind == "hybrid":
        p = spec.params
        frame = spec.dims[0] if spec.dims else 1024
        return simulate_hybrid(p["sigma"], p["sigma_tilde"], p["size_lambda"], p["size_delta"],
                               frame, spec.seed)
    raise ValueError(f"unknown simulation kind {spec.kind!r}")
