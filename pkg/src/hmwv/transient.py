"""Hidden Markov trees over wavelet coefficients with the R -> T transition forbidden.

States: T (index 0) and R (index 1).  The root (scale ``J``) is T with
probability ``nu``; a T parent has T children with probability ``pi``; an R
parent only has R children.  Coefficients at scale ``j`` are centred
Gaussians with deviation ``sigma_t[j-1]`` or ``sigma_r[j-1]``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .bitalloc import distortion_bound, waterfill
from .errors import BitstreamError
from .transforms import WaveletTree

__all__ = [
    "TreeParams",
    "TreePosteriors",
    "TransientMap",
    "TreeFit",
    "expected_counts",
    "expected_transient_energy",
    "map_rate_bound",
    "upward_downward",
    "tree_posteriors",
    "map_states_tree",
    "threshold_select_tree",
    "threshold_select_forest",
    "initial_tree_params",
    "em_estimate_tree",
    "allocate_bits_transient",
    "encode_tree_map",
    "decode_tree_map",
    "write_tree_map",
    "read_tree_map",
    "tree_map_bits",
]

PROB_FLOOR = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TreeParams:
    """Tree model parameters; ``sigma_t[j-1]``/``sigma_r[j-1]`` belong to scale ``j``.

    With ``geometric=True`` the persistence from a parent at scale ``j + 1``
    to its children at scale ``j`` is ``pi ** (J - j)`` instead of ``pi``.
    """

    nu: float
    pi: float
    sigma_t: np.ndarray
    sigma_r: np.ndarray
    geometric: bool = False

    def __post_init__(self):
        st = np.atleast_1d(np.asarray(self.sigma_t, dtype=float)).copy()
        sr = np.atleast_1d(np.asarray(self.sigma_r, dtype=float)).copy()
        if sr.size == 1 and st.size > 1:
            sr = np.full_like(st, sr[0])
        if st.size == 1 and sr.size > 1:
            st = np.full_like(sr, st[0])
        if st.shape != sr.shape or st.ndim != 1 or st.size < 1:
            raise ValueError("per-scale deviations must have one entry per scale")
        if not (0.0 <= self.nu <= 1.0 and 0.0 <= self.pi <= 1.0):
            raise ValueError("nu and pi must lie in [0, 1]")
        if np.any(st < 0) or np.any(sr < 0):
            raise ValueError("deviations must be non-negative")
        st.setflags(write=False)
        sr.setflags(write=False)
        object.__setattr__(self, "sigma_t", st)
        object.__setattr__(self, "sigma_r", sr)
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "pi", float(self.pi))

    @property
    def depth(self) -> int:
        return self.sigma_t.shape[0]

    def persistence(self) -> np.ndarray:
        """``p[j-1]``: Pr{child at scale j is T | parent T}, for ``j = 1..J-1``."""
        J = self.depth
        j = np.arange(1, J)
        if self.geometric:
            return self.pi ** (J - j).astype(float)
        return np.full(J - 1, self.pi)

    def validate(self) -> None:
        if np.any(self.sigma_r <= 0):
            raise ValueError("sigma_r must be positive")
        if np.any(self.sigma_t <= self.sigma_r):
            raise ValueError("sigma_t must exceed sigma_r at every scale")

    def replace(self, **kw) -> "TreeParams":
        vals = dict(nu=self.nu, pi=self.pi, sigma_t=self.sigma_t, sigma_r=self.sigma_r,
                    geometric=self.geometric)
        vals.update(kw)
        return TreeParams(**vals)


@dataclass(frozen=True)
class TreePosteriors:
    """``prob_t[j-1]`` holds ``p_jk(T)`` for the nodes of scale ``j``."""

    prob_t: tuple
    loglik: float

    @property
    def depth(self) -> int:
        return len(self.prob_t)


@dataclass(frozen=True)
class TransientMap:
    """Upward-closed set of detail nodes stored as per-scale boolean masks."""

    nodes: tuple

    def __post_init__(self):
        nodes = tuple(np.asarray(m, dtype=bool) for m in self.nodes)
        J = len(nodes)
        for j, m in enumerate(nodes, start=1):
            if m.shape != (2 ** (J - j),):
                raise ValueError("mask sizes do not match a dyadic tree")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def empty(cls, depth: int) -> "TransientMap":
        return cls(tuple(np.zeros(2 ** (depth - j), dtype=bool) for j in range(1, depth + 1)))

    @classmethod
    def full(cls, depth: int) -> "TransientMap":
        return cls(tuple(np.ones(2 ** (depth - j), dtype=bool) for j in range(1, depth + 1)))

    @classmethod
    def from_indices(cls, indices, depth: int) -> "TransientMap":
        m = cls.empty(depth)
        for j, k in indices:
            m.nodes[j - 1][k] = True
        return m

    @property
    def depth(self) -> int:
        return len(self.nodes)

    def __len__(self):
        return int(sum(m.sum() for m in self.nodes))

    def __eq__(self, other):
        return (isinstance(other, TransientMap) and self.depth == other.depth
                and all(np.array_equal(a, b) for a, b in zip(self.nodes, other.nodes)))

    def __hash__(self):
        return hash(tuple(m.tobytes() for m in self.nodes))

    def contains(self, j: int, k: int) -> bool:
        return bool(self.nodes[j - 1][k])

    def indices(self) -> list[tuple[int, int]]:
        """Nodes as ``(j, k)`` pairs, root scale first."""
        return [(j, int(k)) for j in range(self.depth, 0, -1) for k in np.flatnonzero(self.nodes[j - 1])]

    def counts(self) -> np.ndarray:
        """Number of nodes per scale, indexed ``j - 1``."""
        return np.array([int(m.sum()) for m in self.nodes])

    def is_upward_closed(self) -> bool:
        for j in range(1, self.depth):
            parents = np.repeat(self.nodes[j], 2)
            if np.any(self.nodes[j - 1] & ~parents):
                return False
        return True


@dataclass
class TreeFit:
    params: TreeParams
    log_likelihoods: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    degenerate: bool = False


# --------------------------------------------------------------------------
# Galton-Watson statistics


def expected_counts(params: TreeParams):
    """Expected T-node count per scale (indexed ``j - 1``) and their total.

    ``E[N_j] = nu * prod_{i=j}^{J-1} 2 p_i``, i.e. ``nu (2 pi)**(J-j)`` for
    constant persistence.
    """
    J = params.depth
    growth = 2.0 * params.persistence()
    counts = np.empty(J)
    counts[J - 1] = params.nu
    for j in range(J - 1, 0, -1):
        counts[j - 1] = counts[j] * growth[j - 1]
    return counts, float(counts.sum())


def expected_transient_energy(params: TreeParams) -> float:
    """``sum_j E[N_j] sigma_t[j]**2``."""
    counts, _ = expected_counts(params)
    return float(np.sum(counts * params.sigma_t**2))


def map_rate_bound(params: TreeParams) -> float:
    """Mean size bound of the two-bits-per-node tree code, ``2 * Nbar``."""
    return 2.0 * expected_counts(params)[1]


# --------------------------------------------------------------------------
# inference


def _stack(trees, depth):
    """Per-scale ``(B, 2**(J-j))`` arrays from a sequence of trees."""
    trees = list(trees)
    if not trees:
        raise ValueError("need at least one tree")
    for t in trees:
        if t.depth != depth:
            raise ValueError("tree depth does not match parameters")
    return [np.stack([t.detail[j] for t in trees]) for j in range(depth)]


def _log_emissions(d, sigma_t, sigma_r):
    if sigma_t <= 0 or sigma_r <= 0:
        raise ValueError("emission deviations must be positive")
    out = np.empty(d.shape + (2,))
    out[..., 0] = -0.5 * _LOG_2PI - math.log(sigma_t) - 0.5 * (d / sigma_t) ** 2
    out[..., 1] = -0.5 * _LOG_2PI - math.log(sigma_r) - 0.5 * (d / sigma_r) ** 2
    return out


def _child_message(beta, p):
    """``m(s) = sum_s' P(s, s') beta(s')`` for a child with persistence ``p``."""
    m = np.empty_like(beta)
    m[..., 0] = p * beta[..., 0] + (1.0 - p) * beta[..., 1]
    m[..., 1] = beta[..., 1]
    return m


def _upward_downward(details, params: TreeParams, pairs=False):
    """Scaled upward-downward pass over a batch of trees.

    Returns per-scale posteriors ``gamma[j-1]`` of shape ``(B, n_j, 2)``,
    per-tree log-likelihoods and, if ``pairs``, per-scale sums over trees of
    ``Pr{X_child = T, X_parent = T}`` together with the parent T mass.
    """
    J = params.depth
    pers = params.persistence()
    B = details[0].shape[0]
    betas, msgs = [None] * J, [None] * J
    loglik = np.zeros(B)
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(1, J + 1):
            le = _log_emissions(details[j - 1], params.sigma_t[j - 1], params.sigma_r[j - 1])
            shift = le.max(axis=-1)
            b = np.exp(le - shift[..., None])
            if j > 1:
                m = msgs[j - 2]
                b = b * m[:, 0::2] * m[:, 1::2]
            c = b.sum(-1)
            betas[j - 1] = b / c[..., None]
            loglik += (np.log(c) + shift).sum(axis=1)
            if j < J:
                msgs[j - 1] = _child_message(betas[j - 1], pers[j - 1])
        prior = np.array([params.nu, 1.0 - params.nu])
        root = betas[J - 1][:, 0, :] * prior
        z = root.sum(-1)
        loglik += np.log(z)
        gammas = [None] * J
        gammas[J - 1] = (root / z[:, None])[:, None, :]
        tt = np.zeros(J - 1)
        for j in range(J - 1, 0, -1):
            parent = np.repeat(gammas[j], 2, axis=1)
            beta = betas[j - 1]
            m = msgs[j - 1]
            p = pers[j - 1]
            # Pr{child = s' | parent = s, data} = P(s, s') beta(s') / m(s)
            t_given_t = np.where(m[..., 0] > 0, p * beta[..., 0] / m[..., 0], 0.0)
            g = np.empty_like(parent)
            g[..., 0] = parent[..., 0] * t_given_t
            g[..., 1] = 1.0 - g[..., 0]
            gammas[j - 1] = g
            if pairs:
                tt[j - 1] = g[..., 0].sum()
    if pairs:
        parent_t = np.array([gammas[j][..., 0].sum() * 2 for j in range(1, J)])
        return gammas, loglik, (tt, parent_t)
    return gammas, loglik, None


def upward_downward(tree: WaveletTree, params: TreeParams) -> TreePosteriors:
    """Exact node posteriors ``p_jk(T)`` and log-likelihood of one tree."""
    if tree.depth != params.depth:
        raise ValueError("tree depth does not match parameters")
    gammas, loglik, _ = _upward_downward(_stack([tree], params.depth), params)
    return TreePosteriors(tuple(g[0, :, 0] for g in gammas), float(loglik[0]))


def tree_posteriors(trees, params: TreeParams) -> list[TreePosteriors]:
    """Batched :func:`upward_downward` over several trees of equal depth."""
    trees = list(trees)
    gammas, loglik, _ = _upward_downward(_stack(trees, params.depth), params)
    return [TreePosteriors(tuple(g[b, :, 0] for g in gammas), float(loglik[b]))
            for b in range(len(trees))]


def map_states_tree(tree: WaveletTree, params: TreeParams) -> TransientMap:
    """Joint MAP configuration by max-product over the tree."""
    J = params.depth
    if tree.depth != J:
        raise ValueError("tree depth does not match parameters")
    pers = params.persistence()
    delta = [None] * J
    choice = [None] * J  # best child state given parent state, for scale j
    with np.errstate(divide="ignore"):
        for j in range(1, J + 1):
            score = _log_emissions(tree.detail[j - 1], params.sigma_t[j - 1], params.sigma_r[j - 1])
            if j > 1:
                d = delta[j - 2]
                p = pers[j - 2]
                from_t = (math.log(p) if p > 0 else -np.inf) + d[:, 0]
                from_t_r = (math.log1p(-p) if p < 1 else -np.inf) + d[:, 1]
                best_t = np.where(from_t >= from_t_r, 0, 1)
                val_t = np.maximum(from_t, from_t_r)
                val_r = d[:, 1]
                choice[j - 2] = best_t
                score = score.copy()
                score[:, 0] += val_t[0::2] + val_t[1::2]
                score[:, 1] += val_r[0::2] + val_r[1::2]
            delta[j - 1] = score
        prior = np.log(np.array([params.nu, 1.0 - params.nu]))
    root = delta[J - 1][0] + prior
    states = [None] * J
    states[J - 1] = np.array([0 if root[0] >= root[1] else 1])
    for j in range(J - 1, 0, -1):
        parent = np.repeat(states[j], 2)
        states[j - 1] = np.where(parent == 0, choice[j - 1], 1)
    return TransientMap(tuple(s == 0 for s in states))


def _post_arrays(post):
    return post.prob_t if isinstance(post, TreePosteriors) else tuple(np.asarray(p) for p in post)


def threshold_select_forest(posts, n_total: int) -> list[TransientMap]:
    """Select ``n_total`` nodes across several trees by descending ``p_jk(T)``.

    Selection grows from the roots: a node becomes eligible only once its
    parent is selected, so every returned map is upward-closed.  Ties go to
    the node closer to the root, then the earlier tree, then smaller ``k``.
    """
    probs = [_post_arrays(p) for p in posts]
    if not probs:
        return []
    J = len(probs[0])
    total_nodes = len(probs) * (2**J - 1)
    if not 0 <= n_total <= total_nodes:
        raise ValueError("requested node count exceeds the available nodes")
    maps = [TransientMap.empty(J) for _ in probs]
    heap = [(-float(p[J - 1][0]), 0, b, 0) for b, p in enumerate(probs)]
    heapq.heapify(heap)
    for _ in range(n_total):
        _, depth_from_root, b, k = heapq.heappop(heap)
        j = J - depth_from_root
        maps[b].nodes[j - 1][k] = True
        if j > 1:
            for c in (2 * k, 2 * k + 1):
                heapq.heappush(heap, (-float(probs[b][j - 2][c]), depth_from_root + 1, b, c))
    return maps


def threshold_select_tree(post, n_tr: int) -> TransientMap:
    """Top-``n_tr`` nodes of one tree by posterior, always upward-closed."""
    return threshold_select_forest([post], n_tr)[0]


# --------------------------------------------------------------------------
# EM


def initial_tree_params(trees, nu: float = 0.9, pi: float = 0.5, ratio: float = 8.0,
                        geometric: bool = False) -> TreeParams:
    """Starting point: per-scale robust ``sigma_r``, ``sigma_t`` at least ``ratio`` times larger."""
    trees = list(trees)
    J = trees[0].depth
    details = _stack(trees, J)
    peak = max(float(np.max(np.abs(d))) for d in details)
    floor = max(1e-8 * peak, 1e-300)
    sr = np.array([max(1.4826 * float(np.median(np.abs(d))), floor) for d in details])
    rms = np.array([math.sqrt(float(np.mean(d * d))) for d in details])
    st = np.maximum(ratio * sr, rms)
    st = np.maximum(st, sr * (1 + 1e-6))
    return TreeParams(nu, pi, st, sr, geometric)


def _fit_geometric(tt, parent_t, J, current):
    """Maximise ``sum_g A_g log pi**g + B_g log(1 - pi**g)`` over ``pi``."""
    gens = (J - np.arange(1, J)).astype(float)
    a = tt
    b = parent_t - tt

    def neg(p):
        q = p**gens
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(a > 0, a * np.log(q), 0.0) + np.where(b > 0, b * np.log1p(-q), 0.0)
        return -float(val.sum())

    res = minimize_scalar(neg, bounds=(PROB_FLOOR, 1 - PROB_FLOOR), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x) if neg(res.x) <= neg(current) else current


def _tree_m_step(details, gammas, stats, params: TreeParams, floor: float) -> TreeParams:
    J = params.depth
    nu = float(np.clip(gammas[J - 1][:, 0, 0].mean(), PROB_FLOOR, 1 - PROB_FLOOR))
    tt, parent_t = stats
    pi = params.pi
    if J > 1:
        if params.geometric:
            pi = _fit_geometric(tt, parent_t, J, min(max(params.pi, PROB_FLOOR), 1 - PROB_FLOOR))
        elif parent_t.sum() > 0:
            pi = float(np.clip(tt.sum() / parent_t.sum(), PROB_FLOOR, 1 - PROB_FLOOR))
    st = params.sigma_t.copy()
    sr = params.sigma_r.copy()
    for j in range(J):
        d2 = details[j] ** 2
        wt = gammas[j][..., 0]
        wr = gammas[j][..., 1]
        new_t = math.sqrt((wt * d2).sum() / wt.sum()) if wt.sum() > 1e-12 else st[j]
        new_r = math.sqrt((wr * d2).sum() / wr.sum()) if wr.sum() > 1e-12 else sr[j]
        new_t, new_r = max(new_t, floor), max(new_r, floor)
        if new_t <= new_r:
            mid = math.sqrt(new_t * new_r)
            new_t, new_r = mid * (1 + 1e-6), mid / (1 + 1e-6)

        def q(s_t, s_r):
            return float((wt * (-math.log(s_t) - 0.5 * d2 / s_t**2)).sum()
                         + (wr * (-math.log(s_r) - 0.5 * d2 / s_r**2)).sum())

        if q(new_t, new_r) >= q(st[j], sr[j]):
            st[j], sr[j] = new_t, new_r
    return TreeParams(nu, pi, st, sr, params.geometric)


def em_estimate_tree(trees, init: TreeParams | None = None, tol: float = 1e-5,
                     max_iter: int = 50) -> TreeFit:
    """Generalised EM on several trees with statistics pooled across them.

    All-zero input gives ``degenerate=True`` with ``init`` returned.
    """
    trees = list(trees)
    if not trees:
        raise ValueError("need at least one tree")
    J = trees[0].depth if init is None else init.depth
    details = _stack(trees, J)
    peak = max(float(np.max(np.abs(d))) for d in details)
    if peak == 0.0:
        return TreeFit(init, [], 0, False, degenerate=True)
    if init is None:
        init = initial_tree_params(trees)
    floor = 1e-8 * peak
    params = init
    gammas, loglik, stats = _upward_downward(details, params, pairs=True)
    history = [float(loglik.sum())]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        candidate = _tree_m_step(details, gammas, stats, params, floor)
        g_new, ll_new, st_new = _upward_downward(details, candidate, pairs=True)
        total = float(ll_new.sum())
        if not np.isfinite(total) or total < history[-1] - 1e-10 * abs(history[-1]):
            converged = True
            break
        gain = total - history[-1]
        params, gammas, stats = candidate, g_new, st_new
        history.append(total)
        if gain <= tol * abs(total):
            converged = True
            break
    return TreeFit(params, history, it, converged)


# --------------------------------------------------------------------------
# bit allocation


def allocate_bits_transient(params: TreeParams, mean_rate: float):
    """Per-scale rates (indexed ``j - 1``) and the distortion bound.

    Minimises ``sum_j E[N_j] sigma_t[j]**2 2**(-2 R_j)`` subject to
    ``sum_j E[N_j] R_j = (2**J - 1) * mean_rate`` and ``R_j >= 0``.
    """
    if mean_rate <= 0:
        raise ValueError("mean rate must be positive")
    counts, _ = expected_counts(params)
    var = params.sigma_t**2
    if not np.any(var[counts > 0] > 0):
        raise ValueError("all transient deviations are zero")
    budget = (2**params.depth - 1) * mean_rate
    rates = waterfill(counts, var, budget)
    return rates, distortion_bound(counts, var, budget)


# --------------------------------------------------------------------------
# tree-map code
#
# One bit flags whether the root is in the map; then, scale by scale from the
# root, every mapped node above the finest scale emits one bit per child.
# Finest-scale nodes have no children; with ``leaf_pairs=True`` they still
# emit their (always zero) pair, which gives the plain two-bits-per-node code.


def write_tree_map(writer, tmap: TransientMap, leaf_pairs: bool = False) -> None:
    if not tmap.is_upward_closed():
        raise ValueError("tree map is not upward-closed")
    J = tmap.depth
    writer.write_bit(int(tmap.nodes[J - 1][0]))
    for j in range(J, 1, -1):
        children = tmap.nodes[j - 2]
        for k in np.flatnonzero(tmap.nodes[j - 1]):
            writer.write_bit(int(children[2 * k]))
            writer.write_bit(int(children[2 * k + 1]))
    if leaf_pairs:
        for _ in range(int(tmap.nodes[0].sum())):
            writer.write_bit(0)
            writer.write_bit(0)


def read_tree_map(reader, depth: int, leaf_pairs: bool = False) -> TransientMap:
    tmap = TransientMap.empty(depth)
    try:
        tmap.nodes[depth - 1][0] = bool(reader.read_bit())
        for j in range(depth, 1, -1):
            children = tmap.nodes[j - 2]
            for k in np.flatnonzero(tmap.nodes[j - 1]):
                children[2 * k] = bool(reader.read_bit())
                children[2 * k + 1] = bool(reader.read_bit())
        if leaf_pairs:
            for _ in range(2 * int(tmap.nodes[0].sum())):
                if reader.read_bit():
                    raise BitstreamError("finest-scale node with children", "transient-maps")
    except EOFError as exc:
        raise BitstreamError("tree map truncated", "transient-maps") from exc
    return tmap


def tree_map_bits(tmap: TransientMap, leaf_pairs: bool = False) -> int:
    """Length of the tree code for ``tmap`` without encoding it."""
    if leaf_pairs:
        return 1 + 2 * len(tmap)
    return 1 + 2 * (len(tmap) - int(tmap.nodes[0].sum()))


def encode_tree_map(tmap: TransientMap, leaf_pairs: bool = False) -> np.ndarray:
    """Tree code of ``tmap`` as an array of bits."""
    from .bitio import BitWriter

    w = BitWriter()
    write_tree_map(w, tmap, leaf_pairs)
    return w.bits()


def decode_tree_map(bits, depth: int, leaf_pairs: bool = False) -> TransientMap:
    """Inverse of :func:`encode_tree_map`; trailing bits are not allowed."""
    from .bitio import BitReader

    r = BitReader.from_bits(bits)
    tmap = read_tree_map(r, depth, leaf_pairs)
    if r.remaining():
        raise BitstreamError("trailing bits after tree map", "transient-maps")
    return tmap
