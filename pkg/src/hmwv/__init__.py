"""Hybrid waveform modelling: tonal Markov chains over MDCT rows, transient
hidden Markov trees over wavelet coefficients, and a three-layer codec."""

__version__ = "0.1.0"
