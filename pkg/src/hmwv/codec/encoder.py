"""Three-layer encoder: tonal (MDCT chains), transient (wavelet trees), LPC residual."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..balance import analyze_frame
from ..bitio import BitWriter
from ..errors import BudgetError, DegenerateInputError
from ..tonal import TonalMap, em_estimate, entropy_rate, initial_params, posteriors, threshold_select
from ..transient import (TransientMap, em_estimate_tree, initial_tree_params, threshold_select_forest,
                         tree_posteriors)
from ..transforms import MdctGrid, Signal, WaveletTree, dwt_forward, dwt_inverse, mdct_forward, mdct_inverse
from .bitstream import Bitstream, Header
from .config import CodecConfig, thread_count
from .lpc import lpc_encode
from .sections import (GAIN_BITS, REFLECTION_BITS, Flags, _f32, frequency_weights, quantize_tonal_params,
                       quantize_tree_params, tonal_coeff_overhead, transient_coeff_overhead, write_lpc,
                       write_params, write_tonal_coeffs, write_tonal_map, write_transient_coeffs,
                       write_transient_maps)

__all__ = ["LayerDecomposition", "EncodeResult", "encode", "encode_detailed", "snr"]

_SECTION_OVERHEAD = 6 * (32 + 7)


@dataclass
class LayerDecomposition:
    """Encoder-side layers; ``tonal + transient + residual`` equals the input."""

    tonal: Signal
    transient: Signal
    residual: Signal
    tonal_map: TonalMap
    transient_maps: list
    tonal_coeffs: np.ndarray
    transient_trees: list


@dataclass
class EncodeResult:
    stream: bytes
    layers: LayerDecomposition
    target_bits: float
    superframe_bits: list = field(default_factory=list)

    @property
    def payload_bits(self) -> int:
        return 8 * (len(self.stream) - Header.SIZE)


def snr(reference, test) -> float:
    """``10 log10(|ref|^2 / |ref - test|^2)`` in dB, capped at 200 dB."""
    ref = np.asarray(getattr(reference, "samples", reference), dtype=float)
    tst = np.asarray(getattr(test, "samples", test), dtype=float)
    if ref.shape != tst.shape:
        raise ValueError("signals must have equal length")
    num = float(ref @ ref)
    if num == 0.0:
        raise ValueError("reference signal is zero")
    err = ref - tst
    den = float(err @ err)
    if den == 0.0:
        return 200.0
    return min(200.0, 10.0 * math.log10(num / den))


def _flags(cfg: CodecConfig) -> Flags:
    return Flags(cfg.decay, cfg.tied, cfg.lloyd_max, cfg.normalize_frequency, cfg.quantize,
                 cfg.geometric_persistence)


def _params_bits(cfg: CodecConfig, tonal_present: bool, groups_present) -> int:
    bits = 16 + 8 + 8 + 1 + 8 + len(groups_present)
    if tonal_present:
        N = cfg.bands
        bits += (1 if cfg.tied else N) * 24 + (1 if cfg.decay else N) * 32 + 64
    bits += sum(24 + 32 * cfg.depth for p in groups_present if p)
    return bits


def _fixed_bits(cfg: CodecConfig, windows: int) -> int:
    """Worst-case bits of one superframe that do not depend on the layer budgets."""
    groups = -(-windows // cfg.tree_group)
    bits = _SECTION_OVERHEAD + _params_bits(cfg, True, [True] * groups)
    bits += windows * (GAIN_BITS + cfg.lpc_order * REFLECTION_BITS)
    bits += cfg.bands  # tonal row activity flags
    bits += 32 + 32 + 32 * windows  # coefficient budgets and raw scaling coefficients
    bits += windows  # one bit per empty tree map
    return bits


@dataclass
class _TonalOut:
    param_codes: object
    params: object
    mask: np.ndarray
    map_bytes: bytes
    coef_bytes: bytes
    dequantized: np.ndarray
    spent: int


@dataclass
class _TransientOut:
    group_codes: list
    maps: list
    map_bytes: bytes
    coef_bytes: bytes
    frames: np.ndarray
    trees: list


class _Encoder:
    def __init__(self, cfg: CodecConfig):
        self.cfg = cfg
        self.flags = _flags(cfg)
        self.n0 = _f32(cfg.decay_n0)
        self.alpha = _f32(cfg.alpha)
        self.weights = frequency_weights(cfg.bands, self.n0, cfg.normalize_frequency)

    # -- tonal ---------------------------------------------------------------

    def tonal(self, coeffs: np.ndarray, budget: float, retain: int) -> _TonalOut:
        cfg = self.cfg
        K, N = coeffs.shape
        yw = coeffs * self.weights
        if not np.any(yw):
            w = BitWriter()
            write_tonal_map(w, np.zeros((K, N), dtype=bool), None)
            c = BitWriter()
            write_tonal_coeffs(c, np.zeros((K, N), dtype=bool), coeffs, None, self.weights, 0, self.flags)
            return _TonalOut(None, None, np.zeros((K, N), dtype=bool), w.to_bytes(), c.to_bytes(),
                             np.zeros((K, N)), 0)
        init = initial_params(yw, decay=cfg.decay, n0=self.n0, alpha=self.alpha)
        params = init
        if K >= 2:
            fit = em_estimate(yw, init, tol=cfg.em_tol, max_iter=cfg.em_max_iter, tied=cfg.tied)
            params = fit.params
        codes, qp = quantize_tonal_params(params, self.flags, self.n0, self.alpha)
        post = posteriors(yw, qp)
        total = K * N

        def trial(n_sel):
            tmap = threshold_select(post, yw, n_sel)
            mw = BitWriter()
            write_tonal_map(mw, tmap.mask, qp)
            coef_budget = 0
            if cfg.quantize:
                coef_budget = int(budget - (len(mw) - N) - tonal_coeff_overhead(tmap.mask) + 32)
                if coef_budget < 0:
                    return None
            cw = BitWriter()
            deq = write_tonal_coeffs(cw, tmap.mask, coeffs, qp, self.weights, coef_budget, self.flags)
            err = float(np.sum((coeffs - deq) ** 2))
            return err, tmap, mw, cw, deq, len(mw) - N

        if cfg.quantize:
            nu_e = float(np.mean(qp.equilibrium))
            map_cost = float(np.clip(np.mean(entropy_rate(qp.pi_t, qp.pi_r)) / max(nu_e, 1e-6), 0.5, 20.0))
            n_rule = int(min(total, max(0, budget // (cfg.coef_bits + map_cost))))
            if cfg.selection == "search":
                best = _search(trial, int(min(total, max(0, budget // (1.0 + map_cost)))))
            else:
                best = _fixed_point(trial, n_rule, budget, cfg.coef_bits, total)
        else:
            best = trial(min(total, retain))
        _, tmap, mw, cw, deq, _ = best
        spent = len(mw) - N + len(cw) - 32
        return _TonalOut(codes, qp, tmap.mask, mw.to_bytes(), cw.to_bytes(), deq, spent)

    # -- transient -----------------------------------------------------------

    def transient(self, frames: np.ndarray, budget: float, retain: int) -> _TransientOut:
        cfg = self.cfg
        K = frames.shape[0]
        J = cfg.depth
        trees = [dwt_forward(f, J, cfg.wavelet) for f in frames]
        G = cfg.tree_group
        group_codes, group_params = [], []
        for g0 in range(0, K, G):
            members = trees[g0:g0 + G]
            if not any(np.any(t.flat()[:-1]) for t in members):
                group_codes.append(None)
                group_params.append(None)
                continue
            init = initial_tree_params(members, geometric=cfg.geometric_persistence)
            fit = em_estimate_tree(members, init, tol=cfg.em_tol, max_iter=cfg.em_max_iter)
            codes, qp = quantize_tree_params(fit.params)
            group_codes.append(codes)
            group_params.append(qp)
        active = [t for t in range(K) if group_params[t // G] is not None]
        posts = {}
        for g, p in enumerate(group_params):
            if p is None:
                continue
            idx = [t for t in active if t // G == g]
            for t, post in zip(idx, tree_posteriors([trees[t] for t in idx], p)):
                posts[t] = post
        capacity = len(active) * (2**J - 1)
        scaling = [_f32(t.scaling_coeff) for t in trees]
        flat = np.concatenate([t.flat()[:-1] for t in trees]) if trees else np.zeros(0)

        def trial(n_sel):
            maps = [TransientMap.empty(J) for _ in range(K)]
            chosen = threshold_select_forest([posts[t] for t in active], n_sel)
            for t, m in zip(active, chosen):
                maps[t] = m
            mw = BitWriter()
            write_transient_maps(mw, maps)
            coef_budget = 0
            if cfg.quantize:
                over = transient_coeff_overhead(maps, group_params, G) - 32 - 32 * K
                coef_budget = int(budget - (len(mw) - K) - over)
                if coef_budget < 0:
                    return None
            cw = BitWriter()
            deq = write_transient_coeffs(cw, maps, trees, scaling, group_params, G, coef_budget,
                                         self.flags)
            rec = np.concatenate([np.concatenate(d[::-1]) for d in deq]) if deq else np.zeros(0)
            err = float(np.sum((flat - rec) ** 2))
            return err, maps, mw, cw, deq, len(mw) - K

        if cfg.quantize:
            # each retained node costs at most two map bits
            n_rule = int(min(capacity, max(0, budget // (cfg.coef_bits + 2.0))))
            if cfg.selection == "search":
                best = _search(trial, int(min(capacity, max(0, budget // 3.0))))
            else:
                best = _fixed_point(trial, n_rule, budget, cfg.coef_bits, capacity)
        else:
            best = trial(min(capacity, retain))
        _, maps, mw, cw, deq, _ = best
        rebuilt = np.stack([dwt_inverse(WaveletTree(s, tuple(d), cfg.wavelet)) for s, d in zip(scaling, deq)])
        out_trees = [WaveletTree(s, tuple(d), cfg.wavelet) for s, d in zip(scaling, deq)]
        return _TransientOut(group_codes, maps, mw.to_bytes(), cw.to_bytes(), rebuilt, out_trees)


def _fixed_point(trial, n: int, budget: float, coef_bits: float, cap: int, rounds: int = 6):
    """Selection count from ``budget / (coef_bits + map bits per coefficient)``.

    ``n`` comes from the model estimate of the map cost; the estimate is then
    replaced by the measured cost of the trial map until the count settles.
    The largest count whose map and coefficients fit is kept; ``cap`` is the
    number of selectable coefficients.
    """
    seen = {}
    best = 0
    for _ in range(rounds):
        if n in seen:
            break
        r = seen[n] = trial(n)
        if r is None:
            n = int(n * 0.7)
            continue
        map_bits = r[-1]
        if n > best and map_bits + coef_bits * n <= budget:
            best = n
        per = map_bits / n if n else 0.0
        n_next = int(min(cap, max(0, budget // (coef_bits + per))))
        if n_next == n:
            break
        n = n_next
    if best == 0:
        # the iteration can settle a few bits above the budget; take the
        # smallest workable count rather than dropping the layer
        workable = [k for k, r in seen.items() if r is not None and k > 0]
        best = min(workable) if workable else 0
    if best not in seen:
        seen[best] = trial(best)
    return seen[best]


def _search(trial, n_hi: int, steps: int = 10, ratio: float = 0.65):
    """Best feasible trial over a geometric grid of selection sizes below ``n_hi``.

    The grid is refined once around the winner.  ``trial(0)`` must be
    feasible.
    """
    results = {}

    def run(n):
        if n not in results:
            results[n] = trial(n)
        return results[n]

    grid = sorted({int(n_hi * ratio**i) for i in range(steps)} | {0})
    for n in grid:
        run(n)
    feasible = [n for n in grid if results[n] is not None]
    n_best = min(feasible, key=lambda n: results[n][0])
    lo, hi = int(n_best * ratio), int(min(n_hi, n_best / ratio))
    for n in np.unique(np.linspace(lo, hi, 7).astype(int)):
        r = run(int(n))
        if r is not None and r[0] < results[n_best][0]:
            n_best = int(n)
    return results[n_best]


def _balance(frames: np.ndarray, wavelet: str) -> float:
    vals = []
    for f in frames:
        try:
            vals.append(analyze_frame(f, wavelet).index_tonal)
        except DegenerateInputError:
            continue
    return float(np.mean(vals)) if vals else 0.5


def encode_detailed(signal, config: CodecConfig | None = None) -> EncodeResult:
    """Encode and also return the encoder-side layer decomposition."""
    cfg = config or CodecConfig()
    if isinstance(signal, Signal):
        x, rate = signal.samples, signal.sample_rate
    else:
        x, rate = np.asarray(signal, dtype=float), 44100
        Signal(x, rate)
    ell, N, J, S = cfg.window_length, cfg.bands, cfg.depth, cfg.superframe_windows
    grid = mdct_forward(Signal(x, rate), ell, N)
    K = grid.window_count
    length = x.shape[0]
    if K >= 2**32:
        raise ValueError("signal too long")
    header = Header(rate, ell, J, K * ell - length, S, K, cfg.seed & 0xFFFFFFFF)
    xp = np.zeros(K * ell)
    xp[:length] = x
    ranges = [(k0, min(K, k0 + S)) for k0 in range(0, K, S)]
    duration = max(length, 1) / rate

    target = cfg.rate_kbps * 1000.0 * duration if cfg.quantize else float("nan")
    layer_budgets = []
    fixed_total = 0
    for k0, k1 in ranges:
        fixed = _fixed_bits(cfg, k1 - k0)
        fixed_total += fixed
        layer_budgets.append(target * (k1 - k0) / K - fixed if cfg.quantize else 0.0)
    if cfg.quantize and min(layer_budgets) < 0:
        raise BudgetError("bit rate too low for the stream overhead", fixed_total / duration / 1000.0)

    enc = _Encoder(cfg)
    frames = xp.reshape(K, ell)
    shares = [_balance(frames[k0:k1], cfg.wavelet) for k0, k1 in ranges]
    plans = []  # (tonal budget, tonal count, transient count) per superframe
    for (k0, k1), share, budget in zip(ranges, shares, layer_budgets):
        share = min(max(share, cfg.budget_floor), 1.0 - cfg.budget_floor)
        if cfg.quantize:
            plans.append((budget * share, 0, 0))
        else:
            n = cfg.retain_fraction * (k1 - k0) * ell
            plans.append((0.0, int(round(n * share)), int(round(n * (1.0 - share)))))

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        tonal_out = list(pool.map(
            lambda a: enc.tonal(grid.coeffs[a[0][0]:a[0][1]], a[1][0], a[1][1]), zip(ranges, plans)))

        ton_grid = np.zeros((K, N))
        for (k0, k1), t in zip(ranges, tonal_out):
            ton_grid[k0:k1] = t.dequantized
        x_ton = mdct_inverse(MdctGrid(ton_grid, ell, length, rate)).samples
        xt = np.zeros(K * ell)
        xt[:length] = x_ton
        nton = (xp - xt).reshape(K, ell)

        # bits the tonal layer left unspent go to the transient layer
        tr_plans = [(budget - t.spent, plan[2]) for budget, t, plan in zip(layer_budgets, tonal_out, plans)]
        trans_out = list(pool.map(lambda a: enc.transient(nton[a[0][0]:a[0][1]], a[1][0], a[1][1]),
                                  zip(ranges, tr_plans)))

    x_tr_p = np.concatenate([t.frames for t in trans_out]).ravel()
    res_p = xp - xt - x_tr_p

    superframes = []
    sf_bits = []
    for (k0, k1), t, tr in zip(ranges, tonal_out, trans_out):
        pw = BitWriter()
        write_params(pw, N, enc.flags, cfg.lpc_order, t.param_codes, enc.n0, enc.alpha, cfg.tree_group,
                     tr.group_codes)
        lw = BitWriter()
        lpc_frames = [lpc_encode(res_p[k * ell:(k + 1) * ell], cfg.lpc_order) for k in range(k0, k1)]
        write_lpc(lw, lpc_frames)
        sections = (pw.to_bytes(), t.map_bytes, t.coef_bytes, tr.map_bytes, tr.coef_bytes, lw.to_bytes())
        superframes.append(sections)
        sf_bits.append(sum(32 + 8 * len(s) for s in sections))

    stream = Bitstream(header, tuple(superframes)).to_bytes()
    tonal_map = TonalMap(np.concatenate([t.mask for t in tonal_out]))
    layers = LayerDecomposition(
        tonal=Signal(x_ton, rate),
        transient=Signal(x_tr_p[:length], rate),
        residual=Signal(res_p[:length], rate),
        tonal_map=tonal_map,
        transient_maps=[m for tr in trans_out for m in tr.maps],
        tonal_coeffs=ton_grid,
        transient_trees=[tree for tr in trans_out for tree in tr.trees],
    )
    return EncodeResult(stream, layers, target, sf_bits)


def encode(signal, config: CodecConfig | None = None) -> bytes:
    """Encode ``signal`` into a self-contained byte stream."""
    return encode_detailed(signal, config).stream
