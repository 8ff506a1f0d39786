"""Gaussian rate-distortion helpers shared by the tonal and transient layers."""

from __future__ import annotations

import numpy as np

__all__ = ["rd_gaussian", "waterfill", "expected_distortion", "distortion_bound"]


def rd_gaussian(sigma, rate):
    """Distortion-rate function ``sigma**2 * 2**(-2 R)`` of a Gaussian source."""
    sigma = np.asarray(sigma, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(sigma < 0) or np.any(rate < 0):
        raise ValueError("sigma and rate must be non-negative")
    out = sigma**2 * np.exp2(-2.0 * rate)
    return float(out) if out.ndim == 0 else out


def expected_distortion(weights, variances, rates) -> float:
    """``sum_i w_i v_i 2**(-2 R_i)``: expected distortion of weighted Gaussian groups."""
    w = np.asarray(weights, dtype=float)
    v = np.asarray(variances, dtype=float)
    r = np.asarray(rates, dtype=float)
    return float(np.sum(w * v * np.exp2(-2.0 * r)))


def distortion_bound(weights, variances, budget) -> float:
    """Closed-form minimum of :func:`expected_distortion` without the ``R >= 0`` constraint.

    ``Nbar * (prod v_i**w_i)**(1/Nbar) * 2**(-2 B / Nbar)`` with ``Nbar = sum w``.
    """
    w = np.asarray(weights, dtype=float)
    v = np.asarray(variances, dtype=float)
    active = w > 0
    total = w[active].sum()
    if total <= 0:
        return 0.0
    if np.any(v[active] <= 0):
        return 0.0
    log_geo = np.sum(w[active] * np.log2(v[active])) / total
    return float(total * np.exp2(log_geo - 2.0 * budget / total))


def waterfill(weights, variances, budget):
    """Optimal non-negative rates for ``min sum w v 2^-2R`` s.t. ``sum w R = budget``.

    Reverse water-filling by active-set iteration: the unconstrained
    log-variance solution is computed on the active set and groups that come
    out negative are clamped to zero until none remain.  Groups with zero
    weight or zero variance get rate zero.
    """
    w = np.asarray(weights, dtype=float)
    v = np.asarray(variances, dtype=float)
    if w.shape != v.shape:
        raise ValueError("weights and variances must have the same shape")
    if np.any(w < 0) or np.any(v < 0):
        raise ValueError("weights and variances must be non-negative")
    if not np.any(v[w > 0] > 0):
        raise ValueError("all weighted variances are zero")
    rates = np.zeros_like(w)
    if budget <= 0:
        return rates
    active = (w > 0) & (v > 0)
    logv = np.zeros_like(v)
    logv[v > 0] = np.log2(v[v > 0])
    while True:
        wa = w[active]
        total = wa.sum()
        level = np.sum(wa * logv[active]) / total
        r = budget / total + 0.5 * (logv[active] - level)
        if np.all(r >= 0):
            rates[active] = r
            return rates
        idx = np.flatnonzero(active)
        active[idx[r < 0]] = False
