"""Autocorrelation-method LPC for the residual layer."""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from ..errors import DegenerateInputError

__all__ = ["levinson_durbin", "lpc_encode", "lpc_decode", "reflection_to_lpc", "lpc_to_reflection",
           "LpcSynth"]


def levinson_durbin(r: np.ndarray, order: int):
    """Solve the Toeplitz normal equations.

    Returns ``(a, k, err)`` with ``a[0] = 1`` the prediction-error filter,
    ``k`` the reflection coefficients and ``err`` the final error power.
    Raises :class:`DegenerateInputError` when the recursion loses positive
    definiteness.
    """
    if r[0] <= 0:
        raise DegenerateInputError("zero-energy autocorrelation")
    a = np.zeros(order + 1)
    a[0] = 1.0
    k = np.zeros(order)
    err = float(r[0])
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        ki = -acc / err
        if not abs(ki) < 1.0:
            raise DegenerateInputError("singular autocorrelation")
        a[1:i] = a[1:i] + ki * a[i - 1:0:-1]
        a[i] = ki
        k[i - 1] = ki
        err *= 1.0 - ki * ki
    return a, k, err


def reflection_to_lpc(k) -> np.ndarray:
    a = np.array([1.0])
    for ki in k:
        ext = np.concatenate([a, [0.0]])
        a = ext + ki * ext[::-1]
    return a


def lpc_to_reflection(a) -> np.ndarray:
    a = np.asarray(a, dtype=float) / a[0]
    p = a.size - 1
    k = np.zeros(p)
    for i in range(p, 0, -1):
        ki = a[i]
        k[i - 1] = ki
        if abs(ki) >= 1:
            raise ValueError("unstable filter")
        a = (a[:i] - ki * a[i:0:-1]) / (1 - ki * ki)
    return k


def lpc_encode(frame, order: int = 10):
    """Reflection coefficients and excitation gain of one residual frame.

    The gain is the RMS of the prediction error.  A silent frame gives zero
    gain; a singular autocorrelation falls back to order 0.
    """
    x = np.asarray(frame, dtype=float)
    if x.shape[0] <= order:
        raise ValueError("frame must be longer than the LPC order")
    n = x.shape[0]
    r = np.array([np.dot(x[:n - i], x[i:]) for i in range(order + 1)]) / n
    if r[0] <= 0:
        return np.zeros(order), 0.0
    # slight lag window keeps the recursion well conditioned
    r[0] *= 1.0 + 1e-9
    try:
        _, k, err = levinson_durbin(r, order)
    except DegenerateInputError:
        return np.zeros(order), float(np.sqrt(r[0]))
    return k, float(np.sqrt(max(err, 0.0)))


class LpcSynth:
    """All-pole synthesis with filter state carried across frames."""

    def __init__(self, order: int):
        self.order = order
        self._zi = np.zeros(order)

    def run(self, k, gain: float, excitation: np.ndarray) -> np.ndarray:
        a = reflection_to_lpc(k)
        if a.size - 1 != self.order:
            raise ValueError("filter order mismatch")
        y, self._zi = lfilter([1.0], a, gain * excitation, zi=self._zi)
        return y


def lpc_decode(k, gain: float, length: int, rng: np.random.Generator) -> np.ndarray:
    """Synthesize one frame from white Gaussian excitation (no carried state)."""
    return LpcSynth(len(k)).run(k, gain, rng.standard_normal(length))
