"""Oracle suites behind ``hmwv validate``.

Each check compares a module against an independent route from
:mod:`hmwv.oracles` and yields a :class:`CheckResult`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import oracles
from .bitalloc import distortion_bound, expected_distortion, waterfill
from .bitio import BitReader, BitWriter
from .codec.entropy import read_runlengths, run_lengths, write_runlengths
from .simgen import make_rng, sample_chains, sample_tree_maps
from .tonal import (TonalParams, expected_t_fraction, expected_tonal_energy, forward_backward,
                    run_length_entropy, threshold_select, viterbi_map)
from .transforms import Signal, WaveletTree, dwt_forward, dwt_inverse, mdct_forward, mdct_inverse
from .transient import (TransientMap, TreeParams, expected_counts, expected_transient_energy,
                        map_rate_bound, map_states_tree, read_tree_map, upward_downward,
                        write_tree_map)

__all__ = ["CheckResult", "SUITES", "run_suite"]


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.suite}/{self.name}: {self.detail} ({self.seconds:.2f}s)"


# --------------------------------------------------------------------------
# transforms


def check_mdct(count: int = 100, seed: int = 0):
    rng = make_rng(seed, 1)
    worst_pr = worst_e = 0.0
    for _ in range(count):
        ell = int(2 ** rng.integers(1, 11))
        x = rng.standard_normal(int(rng.integers(1, 5000)))
        g = mdct_forward(Signal(x), ell)
        y = mdct_inverse(g).samples
        worst_pr = max(worst_pr, np.max(np.abs(y - x)) / np.max(np.abs(x)))
        worst_e = max(worst_e, abs(oracles.energy(g.coeffs) / oracles.energy(x) - 1.0))
    ok = worst_pr < 1e-9 and worst_e < 1e-9
    return ok, f"max rel reconstruction {worst_pr:.2e}, max rel energy {worst_e:.2e}"


def check_dwt(count: int = 100, seed: int = 0):
    rng = make_rng(seed, 2)
    worst_pr = worst_e = 0.0
    for _ in range(count):
        J = int(rng.integers(1, 13))
        wav = ("db1", "db2", "db4", "db8")[int(rng.integers(0, 4))]
        x = rng.standard_normal(2**J)
        t = dwt_forward(x, J, wav)
        y = dwt_inverse(t)
        worst_pr = max(worst_pr, np.max(np.abs(y - x)) / np.max(np.abs(x)))
        worst_e = max(worst_e, abs(oracles.energy(t.flat()) / oracles.energy(x) - 1.0))
    ok = worst_pr < 1e-9 and worst_e < 1e-9
    return ok, f"max rel reconstruction {worst_pr:.2e}, max rel energy {worst_e:.2e}"


# --------------------------------------------------------------------------
# inference


def _random_bin(rng):
    st = float(rng.uniform(1.0, 4.0))
    return TonalParams([rng.uniform(0.05, 0.95)], [rng.uniform(0.05, 0.95)], [rng.uniform(0.05, 0.95)],
                       [st], [st * rng.uniform(0.05, 0.8)])


def check_chain_inference(count: int = 200, seed: int = 0):
    rng = make_rng(seed, 3)
    worst = 0.0
    paths_ok = True
    for _ in range(count):
        p = _random_bin(rng)
        K = int(rng.integers(1, 13))
        row = rng.standard_normal(K) * rng.uniform(0.2, 3.0)
        prob, ll = forward_backward(row, p)
        ref_p, ref_ll, _, best = oracles.chain_enumeration(row, p.nu[0], p.pi_t[0], p.pi_r[0],
                                                           p.sigma_t[0], p.sigma_r[0])
        worst = max(worst, float(np.max(np.abs(prob - ref_p))), abs(ll - ref_ll) / max(1.0, abs(ref_ll)))
        path = viterbi_map(row, p)
        # the path must attain the enumerated optimum (ties allowed)
        score = _chain_score(row, path, p)
        paths_ok &= score >= best - 1e-9
    return worst < 1e-10 and paths_ok, f"max deviation {worst:.2e}, Viterbi optimal: {paths_ok}"


def _chain_score(row, path, p):
    nu, pt, pr, st, sr = p.nu[0], p.pi_t[0], p.pi_r[0], p.sigma_t[0], p.sigma_r[0]
    lp = math.log(nu if path[0] else 1 - nu)
    for a, b in zip(path, path[1:]):
        lp += math.log({(1, 1): pt, (1, 0): 1 - pt, (0, 0): pr, (0, 1): 1 - pr}[(int(a), int(b))])
    for y, s in zip(row, path):
        sd = st if s else sr
        lp += -0.5 * math.log(2 * math.pi * sd * sd) - 0.5 * (y / sd) ** 2
    return lp


def _random_tree_params(rng, J):
    st = rng.uniform(1.0, 4.0, J)
    return TreeParams(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), st, st * rng.uniform(0.05, 0.8, J),
                      geometric=bool(rng.integers(0, 2)))


def check_tree_inference(count: int = 200, seed: int = 0):
    rng = make_rng(seed, 4)
    worst = 0.0
    maps_ok = True
    for _ in range(count):
        J = int(rng.integers(1, 4))
        p = _random_tree_params(rng, J)
        det = tuple(rng.standard_normal(2 ** (J - j)) * rng.uniform(0.2, 3.0) for j in range(1, J + 1))
        tree = WaveletTree(0.0, det)
        post = upward_downward(tree, p)
        ref, ref_ll, conf, best = oracles.tree_enumeration(det, p.nu, p.persistence(), p.sigma_t, p.sigma_r)
        dev = max(float(np.max(np.abs(a - b))) for a, b in zip(post.prob_t, ref))
        worst = max(worst, dev, abs(post.loglik - ref_ll) / max(1.0, abs(ref_ll)))
        m = map_states_tree(tree, p)
        maps_ok &= m.is_upward_closed()
        maps_ok &= _tree_score(det, m, p) >= best - 1e-9
    return worst < 1e-10 and maps_ok, f"max deviation {worst:.2e}, MAP optimal: {maps_ok}"


def _tree_score(det, tmap: TransientMap, p: TreeParams):
    J = p.depth
    pers = p.persistence()
    lp = math.log(p.nu if tmap.nodes[J - 1][0] else 1 - p.nu)
    for j in range(1, J):
        for k, s in enumerate(tmap.nodes[j - 1]):
            if tmap.nodes[j][k // 2]:
                lp += math.log(pers[j - 1] if s else 1 - pers[j - 1])
    for j in range(J):
        for y, s in zip(det[j], tmap.nodes[j]):
            sd = p.sigma_t[j] if s else p.sigma_r[j]
            lp += -0.5 * math.log(2 * math.pi * sd * sd) - 0.5 * (y / sd) ** 2
    return lp


def check_threshold(count: int = 50, seed: int = 0):
    rng = make_rng(seed, 5)
    ok = True
    for _ in range(count):
        K, N = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        # coarse posteriors so that ties actually occur
        prob = np.round(rng.random((K, N)), 1)
        y = np.round(rng.standard_normal((K, N)), 1)
        n = int(rng.integers(0, K * N + 1))
        got = np.flatnonzero(threshold_select(prob, y, n).mask.ravel())
        ok &= list(got) == oracles.top_k_full_sort(prob, y, n)
    return ok, f"top-n selection matches full sort on {count} grids: {ok}"


# --------------------------------------------------------------------------
# closed-form formulas


def check_chain_formulas(settings: int = 10, draws: int = 100_000, seed: int = 0):
    rng = make_rng(seed, 6)
    worst = 0.0
    for _ in range(settings):
        K = int(rng.integers(1, 40))
        nu, pt, pr = rng.uniform(0.05, 0.95, 3)
        st = float(rng.uniform(0.5, 3.0))
        (f, fse), (e, ese) = oracles.mc_chain_statistics(K, nu, pt, pr, st, draws, rng)
        params = TonalParams([pt], [pr], [nu], [st], [st / 10])
        worst = max(worst, abs(f - expected_t_fraction(K, nu, pt, pr)) / fse,
                    abs(e - expected_tonal_energy(K, params)) / ese)
    return worst <= 3.0, f"largest deviation {worst:.2f} SE over {settings} settings"


def check_tree_formulas(settings: int = 10, draws: int = 100_000, seed: int = 0):
    rng = make_rng(seed, 7)
    worst = 0.0
    for _ in range(settings):
        J = int(rng.integers(2, 9))
        p = _random_tree_params(rng, J)
        cm, cse, tm, tse, em, ese = oracles.mc_tree_statistics(p.nu, p.persistence(), p.sigma_t, draws, rng)
        counts, total = expected_counts(p)
        live = cse > 0
        dev = [float(np.max(np.abs(cm - counts)[live] / cse[live])) if live.any() else 0.0]
        if tse > 0:
            dev.append(abs(tm - total) / tse)
        if ese > 0:
            dev.append(abs(em - expected_transient_energy(p)) / ese)
        worst = max(worst, *dev)
    # several statistics per setting: compare against 3 SE each
    return worst <= 3.0, f"largest deviation {worst:.2f} SE over {settings} settings"


def check_entropy_series(settings: int = 20, seed: int = 0):
    rng = make_rng(seed, 8)
    worst = 0.0
    for _ in range(settings):
        pt, pr = rng.uniform(0.01, 0.99, 2)
        worst = max(worst, abs(run_length_entropy(pt, pr) - oracles.run_length_entropy_series(pt, pr)))
    return worst < 1e-9, f"max |closed form - series| {worst:.2e}"


def check_allocation(settings: int = 10, seed: int = 0):
    rng = make_rng(seed, 9)
    ok = True
    worst_gap = 0.0
    for _ in range(settings):
        w = rng.uniform(0.1, 1.0, 3)
        v = rng.uniform(0.01, 4.0, 3)
        budget = float(rng.uniform(0.5, 3.0))
        r = waterfill(w, v, budget)
        d = expected_distortion(w, v, r)
        ok &= abs(float(np.dot(w, r)) - budget) < 1e-9
        ok &= d >= distortion_bound(w, v, budget) * (1 - 1e-12)
        _, d_grid = oracles.grid_search_allocation(w, v, budget, 0.01)
        worst_gap = max(worst_gap, (d - d_grid) / d_grid)
    ok &= worst_gap <= 0.005
    return ok, f"budget met and bound respected: {ok}; best grid gain {max(worst_gap, 0.0):.2e}"


# --------------------------------------------------------------------------
# entropy coding


def check_runlength_coding(rows: int = 10_000, K: int = 64, seed: int = 0):
    rng = make_rng(seed, 10)
    pt, pr = 0.9, 0.9
    params = TonalParams.stationary([pt] * rows, [pr] * rows, [1.0] * rows, [0.1] * rows)
    grid = sample_chains(params, K, rng)
    w = BitWriter()
    runs = 0
    for n in range(rows):
        row = grid[:, n]
        runs += len(run_lengths(row))
        write_runlengths(w, row, pt, pr)
    bits = len(w)
    r = BitReader.from_bits(w.bits())
    lossless = all(np.array_equal(read_runlengths(r, K, pt, pr), grid[:, n]) for n in range(rows))
    # the first-state bit of each row is side information, not part of a run
    per_run = (bits - rows) / runs
    bound = run_length_entropy(pt, pr) + 1.0
    return lossless and per_run <= bound, f"{per_run:.3f} bits/run (bound {bound:.3f}), lossless: {lossless}"


def check_tree_coding(trees: int = 10_000, seed: int = 0):
    rng = make_rng(seed, 11)
    params = TreeParams(0.9, 0.6, np.full(8, 2.0), np.full(8, 0.5))
    masks = sample_tree_maps(params, trees, rng)
    w = BitWriter()
    maps = []
    for t in range(trees):
        m = TransientMap(tuple(s[t] for s in masks))
        maps.append(m)
        write_tree_map(w, m)
    r = BitReader.from_bits(w.bits())
    lossless = all(read_tree_map(r, params.depth) == m for m in maps)
    mean = len(w) / trees
    bound = map_rate_bound(params)
    # exact mean of this code: one root bit plus two bits per T node above the finest scale
    counts, total = expected_counts(params)
    exact = 1.0 + 2.0 * (total - counts[0])
    sizes = np.array([1 + 2 * (len(m) - int(m.counts()[0])) for m in maps], dtype=float)
    within = abs(mean - exact) <= 3.0 * sizes.std(ddof=1) / np.sqrt(trees)
    ok = lossless and mean <= bound and within
    return ok, (f"{mean:.3f} bits/tree (bound {bound:.3f}, exact mean {exact:.3f}), "
                f"lossless: {lossless}")


SUITES = {
    "transforms": [("mdct", check_mdct), ("dwt", check_dwt)],
    "inference": [("chain-vs-enumeration", check_chain_inference),
                  ("tree-vs-enumeration", check_tree_inference),
                  ("threshold-order", check_threshold)],
    "formulas": [("chain-statistics", check_chain_formulas), ("tree-statistics", check_tree_formulas),
                 ("run-length-entropy", check_entropy_series), ("allocation", check_allocation)],
    "coding": [("run-length-code", check_runlength_coding), ("tree-code", check_tree_coding)],
}


def run_suite(name: str = "all", seed: int = 0):
    """Run one suite (or ``"all"``) and yield results as they complete."""
    names = list(SUITES) if name == "all" else [name]
    for suite in names:
        if suite not in SUITES:
            raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)} or all")
        for check, fn in SUITES[suite]:
            t0 = time.perf_counter()
            try:
                ok, detail = fn(seed=seed)
            except Exception as exc:  # a crashing check is a failed check
                ok, detail = False, f"error: {exc!r}"
            yield CheckResult(suite, check, bool(ok), detail, time.perf_counter() - t0)
