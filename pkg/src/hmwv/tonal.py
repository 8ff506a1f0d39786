"""Two-state hidden Markov chains over the rows of an MDCT grid.

Every frequency bin ``n`` carries a chain ``X_{0n}, X_{1n}, ...`` over the
states T (tonal, index 0) and R (residual, index 1).  Given the state, the
coefficient is a centred Gaussian with standard deviation ``sigma_t[n]`` or
``sigma_r[n]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bitalloc import distortion_bound, waterfill
from .errors import DegenerateInputError
from .transforms import MdctGrid

__all__ = [
    "DecayForm",
    "TonalParams",
    "TonalPosteriors",
    "TonalMap",
    "TonalFit",
    "binary_entropy",
    "equilibrium_frequency",
    "state_probability",
    "expected_t_fraction",
    "expected_tonal_energy",
    "run_length_entropy",
    "entropy_rate",
    "forward_backward",
    "posteriors",
    "viterbi_map",
    "threshold_select",
    "initial_params",
    "em_estimate",
    "allocate_bits_tonal",
]

PROB_FLOOR = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class DecayForm:
    """Reference deviations with ``sigma_n = sigma / (1 + (n / n0) ** alpha)``."""

    sigma_t: float
    sigma_r: float
    n0: float
    alpha: float = 1.0

    def profile(self, band_count: int) -> np.ndarray:
        n = np.arange(band_count, dtype=float)
        return 1.0 / (1.0 + (n / self.n0) ** self.alpha)


def _as_bins(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or have one entry per bin")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TonalParams:
    """Per-bin chain and emission parameters.

    The constructor only enforces the domain (probabilities in ``[0, 1]``,
    non-negative deviations); :meth:`validate` checks the strict model
    invariants used by inference.
    """

    pi_t: np.ndarray
    pi_r: np.ndarray
    nu: np.ndarray
    sigma_t: np.ndarray
    sigma_r: np.ndarray
    decay: DecayForm | None = None

    def __post_init__(self):
        n = np.asarray(self.sigma_t).size
        for name in ("pi_t", "pi_r", "nu", "sigma_t", "sigma_r"):
            object.__setattr__(self, name, _as_bins(getattr(self, name), n, name))
        for name in ("pi_t", "pi_r", "nu"):
            v = getattr(self, name)
            if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must lie in [0, 1]")
        if np.any(self.sigma_t < 0) or np.any(self.sigma_r < 0):
            raise ValueError("deviations must be non-negative")
        if self.decay is not None:
            prof = self.decay.profile(n)
            if not (np.allclose(self.sigma_t, self.decay.sigma_t * prof, rtol=1e-12, atol=0)
                    and np.allclose(self.sigma_r, self.decay.sigma_r * prof, rtol=1e-12, atol=0)):
                raise ValueError("per-bin deviations disagree with the decay form")

    @classmethod
    def from_decay(cls, band_count, pi_t, pi_r, sigma_t, sigma_r, n0=None, alpha=1.0, nu=None):
        """Parameters in decay form; ``nu`` defaults to the equilibrium frequency."""
        if n0 is None:
            n0 = band_count / 8
        form = DecayForm(float(sigma_t), float(sigma_r), float(n0), float(alpha))
        prof = form.profile(band_count)
        pi_t = _as_bins(pi_t, band_count, "pi_t")
        pi_r = _as_bins(pi_r, band_count, "pi_r")
        if nu is None:
            nu = equilibrium_frequency(pi_t, pi_r)
        return cls(pi_t, pi_r, nu, form.sigma_t * prof, form.sigma_r * prof, form)

    @classmethod
    def stationary(cls, pi_t, pi_r, sigma_t, sigma_r):
        """Per-bin parameters with ``nu`` at equilibrium and no decay form."""
        sigma_t = np.atleast_1d(np.asarray(sigma_t, dtype=float))
        n = sigma_t.size
        pi_t = _as_bins(pi_t, n, "pi_t")
        pi_r = _as_bins(pi_r, n, "pi_r")
        return cls(pi_t, pi_r, equilibrium_frequency(pi_t, pi_r), sigma_t, sigma_r)

    @property
    def band_count(self) -> int:
        return self.sigma_t.shape[0]

    @property
    def equilibrium(self) -> np.ndarray:
        return np.atleast_1d(equilibrium_frequency(self.pi_t, self.pi_r))

    @property
    def tied(self) -> bool:
        return bool(np.all(self.pi_t == self.pi_t[0]) and np.all(self.pi_r == self.pi_r[0]))

    def bin(self, n: int) -> "TonalParams":
        """Single-bin parameter set (decay form dropped)."""
        s = slice(n, n + 1)
        return TonalParams(self.pi_t[s], self.pi_r[s], self.nu[s], self.sigma_t[s], self.sigma_r[s])

    def validate(self) -> None:
        """Check the strict invariants: open probabilities, ``sigma_t > sigma_r > 0``."""
        for name in ("pi_t", "pi_r"):
            v = getattr(self, name)
            if np.any(v <= 0) or np.any(v >= 1):
                raise ValueError(f"{name} must lie strictly inside (0, 1)")
        if np.any(self.sigma_r <= 0):
            raise ValueError("sigma_r must be positive")
        if np.any(self.sigma_t <= self.sigma_r):
            raise ValueError("sigma_t must exceed sigma_r in every bin")


@dataclass(frozen=True)
class TonalPosteriors:
    """Smoothed ``p_kn(T)`` and per-bin log-likelihoods."""

    prob_t: np.ndarray
    loglik: np.ndarray

    @property
    def prob_r(self) -> np.ndarray:
        return 1.0 - self.prob_t

    @property
    def total_loglik(self) -> float:
        return float(np.sum(self.loglik))


@dataclass(frozen=True)
class TonalMap:
    """Tonal significance map stored as a boolean ``K x N`` mask."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ValueError("mask must be two-dimensional")
        object.__setattr__(self, "mask", m)

    @classmethod
    def empty(cls, shape) -> "TonalMap":
        return cls(np.zeros(shape, dtype=bool))

    @classmethod
    def from_indices(cls, indices, shape) -> "TonalMap":
        mask = np.zeros(shape, dtype=bool)
        for k, n in indices:
            if not (0 <= k < shape[0] and 0 <= n < shape[1]):
                raise ValueError("index out of bounds")
            mask[k, n] = True
        return cls(mask)

    @property
    def shape(self):
        return self.mask.shape

    def __len__(self):
        return int(self.mask.sum())

    def indices(self) -> list[tuple[int, int]]:
        return [(int(k), int(n)) for k, n in zip(*np.nonzero(self.mask))]


@dataclass
class TonalFit:
    params: TonalParams
    log_likelihoods: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    degenerate: bool = False


# --------------------------------------------------------------------------
# closed-form statistics


def binary_entropy(p):
    """``h(p)`` in bits with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
        q = 1.0 - p
        b = np.where(q > 0, -q * np.log2(np.where(q > 0, q, 1.0)), 0.0)
    out = a + b
    return float(out) if out.ndim == 0 else out


def equilibrium_frequency(pi_t, pi_r):
    """Stationary probability of T: ``(1 - pi_r) / (2 - pi_t - pi_r)``."""
    pi_t = np.asarray(pi_t, dtype=float)
    pi_r = np.asarray(pi_r, dtype=float)
    denom = 2.0 - pi_t - pi_r
    if np.any(denom <= 0):
        raise ValueError("degenerate chain: both states absorbing")
    out = (1.0 - pi_r) / denom
    return float(out) if out.ndim == 0 else out


def state_probability(k, nu, pi_t, pi_r):
    """Marginal ``Pr{X_k = T}`` of a chain started from ``Pr{X_0 = T} = nu``."""
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("window index must be non-negative")
    ne = equilibrium_frequency(pi_t, pi_r)
    lam = np.asarray(pi_t, dtype=float) + np.asarray(pi_r, dtype=float) - 1.0
    out = ne + (np.asarray(nu, dtype=float) - ne) * lam ** k
    return float(out) if out.ndim == 0 else out


def expected_t_fraction(K, nu, pi_t, pi_r):
    """Expected proportion of T states over ``K`` windows.

    ``tau = nu_e + (nu - nu_e) (1 - lam**K) / (K (1 - lam))`` with
    ``lam = pi_t + pi_r - 1``.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    ne = equilibrium_frequency(pi_t, pi_r)
    lam = np.asarray(pi_t, dtype=float) + np.asarray(pi_r, dtype=float) - 1.0
    geo = (1.0 - lam**K) / (K * (1.0 - lam))
    out = ne + (np.asarray(nu, dtype=float) - ne) * geo
    return float(out) if np.ndim(out) == 0 else out


def expected_tonal_energy(K, params: TonalParams) -> float:
    """Expected tonal energy per window: ``sum_n tau_n sigma_t[n]**2``."""
    tau = expected_t_fraction(K, params.nu, params.pi_t, params.pi_r)
    return float(np.sum(tau * params.sigma_t**2))


def run_length_entropy(pi_t, pi_r):
    """Entropy (bits) of a segment length, mixed over the two segment types.

    A T segment has geometric length ``Pr{L = l} = (1 - pi_t) pi_t**(l-1)``
    with entropy ``h(pi_t) / (1 - pi_t)``; likewise for R.  The two are
    weighted by the equilibrium frequencies.
    """
    ne = np.asarray(equilibrium_frequency(pi_t, pi_r))
    pi_t = np.asarray(pi_t, dtype=float)
    pi_r = np.asarray(pi_r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ht = np.where(pi_t < 1, binary_entropy(pi_t) / np.where(pi_t < 1, 1 - pi_t, 1.0), 0.0)
        hr = np.where(pi_r < 1, binary_entropy(pi_r) / np.where(pi_r < 1, 1 - pi_r, 1.0), 0.0)
    out = np.where(ne > 0, ne * ht, 0.0) + np.where(ne < 1, (1 - ne) * hr, 0.0)
    return float(out) if out.ndim == 0 else out


def entropy_rate(pi_t, pi_r):
    """Per-window entropy of the stationary chain, ``nu_e h(pi_t) + (1 - nu_e) h(pi_r)``."""
    ne = np.asarray(equilibrium_frequency(pi_t, pi_r))
    out = ne * binary_entropy(pi_t) + (1 - ne) * binary_entropy(pi_r)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# inference


def _log_emissions(y, sigma_t, sigma_r):
    """``(K, N, 2)`` Gaussian log densities for the two states."""
    if np.any(sigma_t <= 0) or np.any(sigma_r <= 0):
        raise ValueError("emission deviations must be positive")
    out = np.empty(y.shape + (2,))
    out[..., 0] = -0.5 * _LOG_2PI - np.log(sigma_t) - 0.5 * (y / sigma_t) ** 2
    out[..., 1] = -0.5 * _LOG_2PI - np.log(sigma_r) - 0.5 * (y / sigma_r) ** 2
    return out


def _transition(pi_t, pi_r):
    P = np.empty(pi_t.shape + (2, 2))
    P[..., 0, 0] = pi_t
    P[..., 0, 1] = 1.0 - pi_t
    P[..., 1, 0] = 1.0 - pi_r
    P[..., 1, 1] = pi_r
    return P


def _smooth(y, nu, pi_t, pi_r, sigma_t, sigma_r, pairs=False):
    """Scaled forward-backward over all bins at once.

    Returns ``gamma (K, N, 2)``, per-bin log-likelihood and, if ``pairs``,
    the summed pairwise posteriors ``(N, 2, 2)``.
    """
    K, N = y.shape
    le = _log_emissions(y, sigma_t, sigma_r)
    shift = le.max(axis=-1)
    e = np.exp(le - shift[..., None])
    P = _transition(pi_t, pi_r)
    alpha = np.empty((K, N, 2))
    scale = np.empty((K, N))
    a = np.stack([nu, 1.0 - nu], axis=-1) * e[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale[0] = a.sum(-1)
        alpha[0] = a / scale[0][:, None]
        for k in range(1, K):
            a = np.einsum("ni,nij->nj", alpha[k - 1], P) * e[k]
            scale[k] = a.sum(-1)
            alpha[k] = a / scale[k][:, None]
        loglik = np.log(scale).sum(axis=0) + shift.sum(axis=0)
    beta = np.empty((K, N, 2))
    beta[-1] = 1.0
    for k in range(K - 2, -1, -1):
        beta[k] = np.einsum("nij,nj->ni", P, e[k + 1] * beta[k + 1]) / scale[k + 1][:, None]
    gamma = alpha * beta
    gamma /= gamma.sum(-1, keepdims=True)
    xi = None
    if pairs:
        w = e[1:] * beta[1:] / scale[1:, :, None]
        xi = np.einsum("kni,nij,knj->nij", alpha[:-1], P, w)
    return gamma, loglik, xi


def _bin_arrays(params: TonalParams):
    return params.nu, params.pi_t, params.pi_r, params.sigma_t, params.sigma_r


def forward_backward(row, params: TonalParams):
    """Smoothed ``p_k(T)`` and log-likelihood for one row of coefficients.

    ``params`` must describe a single bin (see :meth:`TonalParams.bin`).
    """
    y = np.asarray(row, dtype=float)
    if y.ndim != 1 or not np.all(np.isfinite(y)):
        raise ValueError("row must be a finite 1-D array")
    if params.band_count != 1:
        raise ValueError("forward_backward expects single-bin parameters")
    gamma, loglik, _ = _smooth(y[:, None], *_bin_arrays(params))
    return gamma[:, 0, 0], float(loglik[0])


def posteriors(grid, params: TonalParams) -> TonalPosteriors:
    """Forward-backward over every bin of ``grid`` (an :class:`MdctGrid` or array)."""
    y = grid.coeffs if isinstance(grid, MdctGrid) else np.asarray(grid, dtype=float)
    if y.shape[1] != params.band_count:
        raise ValueError("grid band count does not match parameters")
    gamma, loglik, _ = _smooth(y, *_bin_arrays(params))
    return TonalPosteriors(gamma[..., 0], loglik)


def viterbi_map(row, params: TonalParams) -> np.ndarray:
    """MAP state path for one row; returns a boolean array, True for T."""
    y = np.asarray(row, dtype=float)
    if params.band_count != 1:
        raise ValueError("viterbi_map expects single-bin parameters")
    K = y.shape[0]
    le = _log_emissions(y[:, None], params.sigma_t, params.sigma_r)[:, 0, :]
    with np.errstate(divide="ignore"):
        logP = np.log(_transition(params.pi_t, params.pi_r)[0])
        nu = float(params.nu[0])
        delta = np.log(np.array([nu, 1.0 - nu])) + le[0]
    back = np.zeros((K, 2), dtype=int)
    for k in range(1, K):
        cand = delta[:, None] + logP
        back[k] = np.argmax(cand, axis=0)
        delta = cand[back[k], [0, 1]] + le[k]
    path = np.empty(K, dtype=int)
    path[-1] = int(np.argmax(delta))
    for k in range(K - 1, 0, -1):
        path[k - 1] = back[k, path[k]]
    return path == 0


def threshold_select(post, grid, n_ton: int) -> TonalMap:
    """Keep the ``n_ton`` coefficients with the largest ``p_kn(T)``.

    Ties are broken by larger ``|coefficient|`` and then by ascending
    ``(k, n)``.
    """
    prob = post.prob_t if isinstance(post, TonalPosteriors) else np.asarray(post, dtype=float)
    y = grid.coeffs if isinstance(grid, MdctGrid) else np.asarray(grid, dtype=float)
    K, N = prob.shape
    if not 0 <= n_ton <= K * N:
        raise ValueError("n_ton must lie in 0..K*N")
    kk, nn = np.indices((K, N))
    order = np.lexsort((nn.ravel(), kk.ravel(), -np.abs(y).ravel(), -prob.ravel()))
    mask = np.zeros(K * N, dtype=bool)
    mask[order[:n_ton]] = True
    return TonalMap(mask.reshape(K, N))


# --------------------------------------------------------------------------
# EM


def _persistence_objective(A, g0, pi_t, pi_r):
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (A[..., 0, 0] * np.log(pi_t) + A[..., 0, 1] * np.log1p(-pi_t)
               + A[..., 1, 1] * np.log(pi_r) + A[..., 1, 0] * np.log1p(-pi_r)
               + g0[..., 0] * np.log1p(-pi_r) + g0[..., 1] * np.log1p(-pi_t)
               - (g0[..., 0] + g0[..., 1]) * np.log(2.0 - pi_t - pi_r))
    return val


def _coordinate_max(a, b, G, s, lo, hi):
    """Maximise ``a log p + b log(1-p) - G log(s-p)`` over ``p`` in ``[lo, hi]``."""
    qa = a + b - G
    qb = G - a - a * s - b * s
    qc = a * s
    cands = [np.full_like(a, lo), np.full_like(a, hi)]
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.sqrt(np.maximum(qb * qb - 4 * qa * qc, 0.0))
        lin = np.abs(qa) < 1e-12 * (np.abs(qb) + np.abs(qc) + 1e-300)
        r1 = np.where(lin, -qc / qb, (-qb + disc) / (2 * qa))
        r2 = np.where(lin, -qc / qb, (-qb - disc) / (2 * qa))
    cands += [np.clip(np.nan_to_num(r1, nan=lo), lo, hi), np.clip(np.nan_to_num(r2, nan=lo), lo, hi)]
    cands = np.stack(cands, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (a[..., None] * np.log(cands) + b[..., None] * np.log1p(-cands)
             - G[..., None] * np.log(s[..., None] - cands))
    f = np.nan_to_num(f, nan=-np.inf)
    return np.take_along_axis(cands, np.argmax(f, axis=-1)[..., None], axis=-1)[..., 0]


def _update_persistence(A, g0, pi_t, pi_r, rounds=25):
    """Coordinate ascent on the expected complete-data transition term.

    Each coordinate step is an exact 1-D maximisation, so the objective never
    decreases from ``(pi_t, pi_r)``.
    """
    lo, hi = PROB_FLOOR, 1.0 - PROB_FLOOR
    pt = np.clip(pi_t, lo, hi)
    pr = np.clip(pi_r, lo, hi)
    G = g0[..., 0] + g0[..., 1]
    for _ in range(rounds):
        prev_t, prev_r = pt, pr
        pt = _coordinate_max(A[..., 0, 0], A[..., 0, 1] + g0[..., 1], G, 2.0 - pr, lo, hi)
        pr = _coordinate_max(A[..., 1, 1], A[..., 1, 0] + g0[..., 0], G, 2.0 - pt, lo, hi)
        if np.max(np.abs(pt - prev_t)) < 1e-13 and np.max(np.abs(pr - prev_r)) < 1e-13:
            break
    return pt, pr


def _emission_q(gamma, y2, sigma_t, sigma_r):
    qt = -np.log(sigma_t) - 0.5 * y2 / sigma_t**2
    qr = -np.log(sigma_r) - 0.5 * y2 / sigma_r**2
    return (gamma[..., 0] * qt).sum(axis=0) + (gamma[..., 1] * qr).sum(axis=0)


def initial_params(grid, decay: bool = True, n0: float | None = None, alpha: float = 1.0,
                   persistence: float = 0.9, ratio: float = 8.0) -> TonalParams:
    """Robust starting point: ``sigma_r = 1.4826 median|y|`` per bin, ``sigma_t = 8 sigma_r``."""
    y = grid.coeffs if isinstance(grid, MdctGrid) else np.asarray(grid, dtype=float)
    K, N = y.shape
    peak = float(np.max(np.abs(y))) if y.size else 0.0
    if peak == 0.0:
        raise DegenerateInputError("all-zero coefficient grid")
    floor = 1e-8 * peak
    med = 1.4826 * np.median(np.abs(y), axis=0)
    if decay:
        n0 = N / 8 if n0 is None else n0
        prof = DecayForm(1.0, 1.0, n0, alpha).profile(N)
        ref = max(float(np.median(med / prof)), floor / prof.min())
        return TonalParams.from_decay(N, persistence, persistence, ratio * ref, ref, n0, alpha)
    sr = np.maximum(med, floor)
    return TonalParams.stationary(persistence, persistence, ratio * sr, sr)


def _m_step(y, y2, gamma, xi, params: TonalParams, tied: bool, floor: float) -> TonalParams:
    g0 = gamma[0]
    if tied:
        A = xi.sum(axis=0)
        g = g0.sum(axis=0)
        pt, pr = _update_persistence(A, g, params.pi_t[0], params.pi_r[0])
        pi_t = np.full(params.band_count, float(pt))
        pi_r = np.full(params.band_count, float(pr))
    else:
        pi_t, pi_r = _update_persistence(xi, g0, params.pi_t, params.pi_r)
    nu = equilibrium_frequency(pi_t, pi_r)

    wt = gamma[..., 0]
    wr = gamma[..., 1]
    if params.decay is not None:
        form = params.decay
        prof = form.profile(params.band_count)
        scaled = y2 / prof**2
        st = math.sqrt(max((wt * scaled).sum() / max(wt.sum(), 1e-300), 0.0))
        sr = math.sqrt(max((wr * scaled).sum() / max(wr.sum(), 1e-300), 0.0))
        ref_floor = floor / prof.min()
        st, sr = max(st, ref_floor), max(sr, ref_floor)
        if st <= sr:
            mid = math.sqrt(st * sr)
            st, sr = mid * (1 + 1e-6), mid / (1 + 1e-6)
        old_q = _emission_q(gamma, y2, params.sigma_t, params.sigma_r).sum()
        new_q = _emission_q(gamma, y2, st * prof, sr * prof).sum()
        if new_q < old_q:
            st, sr = form.sigma_t, form.sigma_r
        return TonalParams.from_decay(params.band_count, pi_t, pi_r, st, sr, form.n0, form.alpha, nu)

    with np.errstate(invalid="ignore", divide="ignore"):
        st = np.sqrt((wt * y2).sum(axis=0) / np.maximum(wt.sum(axis=0), 1e-300))
        sr = np.sqrt((wr * y2).sum(axis=0) / np.maximum(wr.sum(axis=0), 1e-300))
    st = np.maximum(st, floor)
    sr = np.maximum(sr, floor)
    swap = st <= sr
    if np.any(swap):
        mid = np.sqrt(st[swap] * sr[swap])
        st[swap] = mid * (1 + 1e-6)
        sr[swap] = mid / (1 + 1e-6)
    old_q = _emission_q(gamma, y2, params.sigma_t, params.sigma_r)
    new_q = _emission_q(gamma, y2, st, sr)
    keep = new_q < old_q
    st[keep] = params.sigma_t[keep]
    sr[keep] = params.sigma_r[keep]
    return TonalParams(pi_t, pi_r, nu, st, sr)


def em_estimate(grid, init: TonalParams | None = None, tol: float = 1e-5, max_iter: int = 50,
                tied: bool = True) -> TonalFit:
    """Generalised EM for the tonal chains of ``grid``.

    The active constraints follow ``init``: the decay form is kept if
    ``init.decay`` is set, transitions are shared across bins if ``tied``.
    Initial frequencies stay at equilibrium.  Bin log-likelihoods are summed.
    An all-zero grid yields ``degenerate=True`` with ``init`` returned.
    """
    y = grid.coeffs if isinstance(grid, MdctGrid) else np.asarray(grid, dtype=float)
    if y.ndim != 2 or y.shape[0] < 2:
        raise ValueError("EM needs a K x N grid with K >= 2")
    peak = float(np.max(np.abs(y)))
    if peak == 0.0 or not np.isfinite(peak):
        return TonalFit(init, [], 0, False, degenerate=True)
    if init is None:
        init = initial_params(y)
    if init.band_count != y.shape[1]:
        raise ValueError("init band count does not match grid")
    floor = 1e-8 * peak
    params = init
    if tied and not params.tied:
        pt, pr = float(params.pi_t.mean()), float(params.pi_r.mean())
        params = _replace_persistence(params, pt, pr)
    else:
        params = _replace_persistence(params, params.pi_t, params.pi_r)
    y2 = y * y
    history = []
    converged = False
    it = 0
    gamma, loglik, xi = _smooth(y, *_bin_arrays(params), pairs=True)
    history.append(float(loglik.sum()))
    for it in range(1, max_iter + 1):
        candidate = _m_step(y, y2, gamma, xi, params, tied, floor)
        g_new, ll_new, xi_new = _smooth(y, *_bin_arrays(candidate), pairs=True)
        total = float(ll_new.sum())
        if not np.isfinite(total) or total < history[-1] - 1e-10 * abs(history[-1]):
            # numerical safety net; a GEM step cannot legitimately lose likelihood
            converged = True
            break
        gain = total - history[-1]
        params, gamma, xi = candidate, g_new, xi_new
        history.append(total)
        if gain <= tol * abs(total):
            converged = True
            break
    return TonalFit(params, history, it, converged)


def _replace_persistence(params: TonalParams, pi_t, pi_r) -> TonalParams:
    n = params.band_count
    pi_t = np.clip(_as_bins(pi_t, n, "pi_t"), PROB_FLOOR, 1 - PROB_FLOOR)
    pi_r = np.clip(_as_bins(pi_r, n, "pi_r"), PROB_FLOOR, 1 - PROB_FLOOR)
    nu = equilibrium_frequency(pi_t, pi_r)
    return TonalParams(pi_t, pi_r, nu, params.sigma_t, params.sigma_r, params.decay)


# --------------------------------------------------------------------------
# bit allocation


def allocate_bits_tonal(params: TonalParams, mean_rate: float):
    """Per-bin rates for tonal coefficients and the matching distortion bound.

    Minimises ``sum_n nu_e[n] sigma_t[n]**2 2**(-2 R_n)`` subject to
    ``sum_n nu_e[n] R_n = N * mean_rate`` and ``R_n >= 0``.
    """
    if mean_rate <= 0:
        raise ValueError("mean rate must be positive")
    weights = params.equilibrium
    var = params.sigma_t**2
    if not np.any(var[weights > 0] > 0):
        raise ValueError("all tonal deviations are zero")
    budget = params.band_count * mean_rate
    rates = waterfill(weights, var, budget)
    return rates, distortion_bound(weights, var, budget)
