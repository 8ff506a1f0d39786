"""Independent reference computations used by the validation suite and the tests.

Nothing here calls the recursions it checks: chain and tree posteriors are
obtained by enumerating every hidden configuration, closed-form statistics
by Monte Carlo with a sampler written separately from :mod:`hmwv.simgen`.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

__all__ = [
    "chain_enumeration",
    "tree_configurations",
    "tree_enumeration",
    "mc_chain_statistics",
    "mc_tree_statistics",
    "geometric_entropy_series",
    "run_length_entropy_series",
    "grid_search_allocation",
    "energy",
    "top_k_full_sort",
]


def _normal_logpdf(x, sigma):
    return -0.5 * math.log(2.0 * math.pi * sigma * sigma) - 0.5 * (x / sigma) ** 2


def chain_enumeration(row, nu, pi_t, pi_r, sigma_t, sigma_r):
    """Posteriors, log-likelihood and MAP path of one two-state chain by enumeration.

    Returns ``(p_T per window, loglik, best path, best joint log-probability)``.
    Cost is ``2**K``; meant for ``K <= 12``.
    """
    row = [float(v) for v in row]
    K = len(row)
    trans = {(1, 1): pi_t, (1, 0): 1 - pi_t, (0, 0): pi_r, (0, 1): 1 - pi_r}
    logs, paths = [], []
    for path in itertools.product((0, 1), repeat=K):
        p = nu if path[0] else 1 - nu
        for a, b in zip(path, path[1:]):
            p *= trans[(a, b)]
        if p == 0.0:
            continue
        lp = math.log(p)
        for y, s in zip(row, path):
            lp += _normal_logpdf(y, sigma_t if s else sigma_r)
        logs.append(lp)
        paths.append(path)
    logs = np.array(logs)
    top = logs.max()
    w = np.exp(logs - top)
    total = w.sum()
    prob_t = np.array(paths, dtype=float).T @ w / total
    best = int(np.argmax(logs))
    return prob_t, float(top + math.log(total)), np.array(paths[best], dtype=bool), float(logs[best])


def tree_configurations(depth: int):
    """All upward-closed node sets of a depth-``depth`` dyadic tree.

    Each configuration is a list of per-scale 0/1 tuples indexed ``j - 1``.
    """

    def subtrees(j):
        # configurations of the subtree hanging below one T node of scale j
        if j == 1:
            return [[]]
        below = subtrees(j - 1)
        out = []
        for left_on, right_on in itertools.product((0, 1), repeat=2):
            lefts = below if left_on else [None]
            rights = below if right_on else [None]
            for lc in lefts:
                for rc in rights:
                    levels = [(left_on, right_on)]
                    for lvl in range(j - 2):
                        a = lc[lvl] if lc is not None else (0,) * 2 ** (lvl + 1)
                        b = rc[lvl] if rc is not None else (0,) * 2 ** (lvl + 1)
                        levels.append(tuple(a) + tuple(b))
                    out.append(levels)
        return out

    configs = [[(0,) * 2 ** (depth - j) for j in range(1, depth + 1)]]
    for sub in subtrees(depth):
        # sub lists levels from scale depth-1 downwards
        scales = [None] * depth
        scales[depth - 1] = (1,)
        for i, lvl in enumerate(sub):
            scales[depth - 2 - i] = tuple(lvl)
        configs.append(scales)
    return configs


def tree_enumeration(details, nu, persistence, sigma_t, sigma_r):
    """Node posteriors, log-likelihood and MAP configuration of one tree by enumeration.

    ``details[j-1]`` are the scale-``j`` coefficients; ``persistence[j-1]``
    is Pr{child at scale j is T | parent T}.  Returns ``(prob_t per scale,
    loglik, best configuration, best joint log-probability)``.
    """
    J = len(details)
    logs, confs = [], []
    for conf in tree_configurations(J):
        p = nu if conf[J - 1][0] else 1 - nu
        for j in range(1, J):
            for k, s in enumerate(conf[j - 1]):
                if conf[j][k // 2]:
                    p *= persistence[j - 1] if s else 1 - persistence[j - 1]
        if p == 0.0:
            continue
        lp = math.log(p)
        for j in range(J):
            for y, s in zip(details[j], conf[j]):
                lp += _normal_logpdf(float(y), sigma_t[j] if s else sigma_r[j])
        logs.append(lp)
        confs.append(conf)
    logs = np.array(logs)
    top = logs.max()
    w = np.exp(logs - top)
    total = w.sum()
    prob = [np.zeros(2 ** (J - j)) for j in range(1, J + 1)]
    for wi, conf in zip(w, confs):
        for j in range(J):
            prob[j] += wi * np.array(conf[j], dtype=float)
    prob = [p / total for p in prob]
    best = int(np.argmax(logs))
    return prob, float(top + math.log(total)), confs[best], float(logs[best])


def mc_chain_statistics(K, nu, pi_t, pi_r, sigma_t, draws, rng):
    """Monte Carlo T-fraction and tonal energy of one bin over ``draws`` chains.

    Returns ``((mean fraction, se), (mean energy per window, se))``; energy
    counts ``y**2`` of T windows only.
    """
    state = rng.random(draws) < nu
    t_count = state.astype(float)
    energy = np.where(state, (sigma_t * rng.standard_normal(draws)) ** 2, 0.0)
    for _ in range(1, K):
        u = rng.random(draws)
        state = np.where(state, u < pi_t, u > pi_r)
        t_count += state
        energy += np.where(state, (sigma_t * rng.standard_normal(draws)) ** 2, 0.0)
    frac = t_count / K
    energy /= K
    return ((frac.mean(), frac.std(ddof=1) / math.sqrt(draws)),
            (energy.mean(), energy.std(ddof=1) / math.sqrt(draws)))


def mc_tree_statistics(nu, persistence, sigma_t, draws, rng):
    """Monte Carlo per-scale T counts and T-node energy of a Galton-Watson tree.

    Generation by generation: the root is T with probability ``nu``; each T
    node of scale ``j + 1`` has two children, each T with probability
    ``persistence[j-1]``.  Returns ``(count means, count ses, total mean,
    total se, energy mean, energy se)``.
    """
    J = len(sigma_t)
    alive = (rng.random(draws) < nu).astype(np.int64)
    counts = np.zeros((J, draws))
    counts[J - 1] = alive
    for j in range(J - 1, 0, -1):
        alive = rng.binomial(2 * alive, persistence[j - 1])
        counts[j - 1] = alive
    # sum of n squared normals is chi-square with n degrees of freedom
    energy = np.zeros(draws)
    for j in range(J):
        energy += sigma_t[j] ** 2 * rng.chisquare(np.maximum(counts[j], 1e-300)) * (counts[j] > 0)
    total = counts.sum(axis=0)
    se = counts.std(axis=1, ddof=1) / math.sqrt(draws)
    return (counts.mean(axis=1), se, total.mean(), total.std(ddof=1) / math.sqrt(draws),
            energy.mean(), energy.std(ddof=1) / math.sqrt(draws))


def geometric_entropy_series(p, terms: int = 200000):
    """Entropy in bits of ``Pr{L = l} = (1 - p) p**(l-1)`` by direct summation."""
    if p <= 0:
        return 0.0
    l = np.arange(1, terms + 1, dtype=float)
    logq = math.log(1 - p) + (l - 1) * math.log(p)
    q = np.exp(logq)
    return float(-np.sum(q * logq) / math.log(2.0))


def run_length_entropy_series(pi_t, pi_r, terms: int = 200000):
    ne = (1 - pi_r) / (2 - pi_t - pi_r)
    return ne * geometric_entropy_series(pi_t, terms) + (1 - ne) * geometric_entropy_series(pi_r, terms)


def grid_search_allocation(weights, variances, budget, step: float = 0.01):
    """Best rate vector on a ``step`` grid with ``sum w R <= budget`` (two to four groups).

    All but the last rate run over the grid; the last one absorbs the rest
    of the budget, since spending it can only lower the distortion.
    Returns ``(rates, distortion)``.
    """
    w = np.asarray(weights, dtype=float)
    v = np.asarray(variances, dtype=float)
    n = w.shape[0]
    axes = [np.arange(0.0, budget / w[i] + step / 2, step) for i in range(n - 1)]
    head = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    left = budget - head @ w[:-1]
    keep = left >= -1e-12
    head, left = head[keep], np.maximum(left[keep], 0.0)
    rates = np.column_stack([head, left / w[-1]])
    d = (w * v * 2.0 ** (-2.0 * rates)).sum(axis=1)
    i = int(np.argmin(d))
    return rates[i], float(d[i])


def energy(values) -> float:
    """Plain sum of squares, accumulated in pairwise order by ``math.fsum``."""
    return math.fsum(float(v) * float(v) for v in np.ravel(values))


def top_k_full_sort(prob, magnitude, k):
    """Indices of the ``k`` best entries under the ordering (prob desc, |coeff| desc, flat index asc)."""
    p = np.ravel(prob)
    m = np.abs(np.ravel(magnitude))
    order = sorted(range(p.size), key=lambda i: (-p[i], -m[i], i))
    return sorted(order[:k])
