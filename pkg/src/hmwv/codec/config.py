"""Codec configuration and the ``key = value`` config-file format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

__all__ = ["CodecConfig", "parse_config", "load_config", "thread_count"]


@dataclass(frozen=True)
class CodecConfig:
    rate_kbps: float = 64.0
    window_length: int = 1024
    band_count: int | None = None
    superframe_windows: int = 32
    wavelet: str = "db8"
    decay: bool = True
    alpha: float = 1.0
    n0: float | None = None
    tied: bool = True
    geometric_persistence: bool = False
    tree_group: int = 16
    lloyd_max: bool = False
    normalize_frequency: bool = False
    coef_bits: float = 5.0
    budget_floor: float = 0.05
    lpc_order: int = 10
    em_tol: float = 1e-5
    em_max_iter: int = 50
    seed: int = 0
    quantize: bool = True
    retain_fraction: float = 0.06
    # "rule": count = budget / (coef_bits + map bits per coefficient);
    # "search": pick the count with the smallest quantization error
    selection: str = "rule"

    def __post_init__(self):
        ell = self.window_length
        if ell < 4 or ell & (ell - 1) or ell > 32768:
            raise ValueError("window length must be a power of two between 4 and 32768")
        n = self.bands
        if not 0 < n <= ell or n > 65535:
            raise ValueError("band count must lie in 1..window_length")
        if not 1 <= self.superframe_windows <= 255:
            raise ValueError("superframe size must lie in 1..255 windows")
        if not 1 <= self.tree_group <= 255:
            raise ValueError("tree group size must lie in 1..255")
        if self.rate_kbps <= 0 and self.quantize:
            raise ValueError("bit rate must be positive")
        if not 0 <= self.lpc_order <= 32:
            raise ValueError("LPC order must lie in 0..32")
        if not 0 < self.retain_fraction <= 1:
            raise ValueError("retain fraction must lie in (0, 1]")
        if not 0 <= self.budget_floor < 0.5:
            raise ValueError("budget floor must lie in [0, 0.5)")
        if self.selection not in ("rule", "search"):
            raise ValueError("selection must be 'rule' or 'search'")
        if self.alpha <= 0 or (self.n0 is not None and self.n0 <= 0):
            raise ValueError("decay parameters must be positive")

    @property
    def bands(self) -> int:
        return self.window_length if self.band_count is None else int(self.band_count)

    @property
    def depth(self) -> int:
        return self.window_length.bit_length() - 1

    @property
    def decay_n0(self) -> float:
        return self.bands / 8 if self.n0 is None else float(self.n0)

    def replace(self, **kw) -> "CodecConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_mapping(cls, values: dict) -> "CodecConfig":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            name = key.strip().replace("-", "_")
            if name not in known:
                raise ValueError(f"unknown configuration key {key!r}")
            kw[name] = _coerce(raw, known[name].type, name)
        return cls(**kw)


def _coerce(raw, type_name, name):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    t = str(type_name)
    if "None" in t and text.lower() in ("none", ""):
        return None
    try:
        if t.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if t.startswith("int"):
            return int(text)
        if t.startswith("float"):
            return float(text)
    except ValueError as exc:
        raise ValueError(f"bad value {raw!r} for {name}") from exc
    return text


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def thread_count() -> int:
    """Worker count, capped by the ``HMWV_THREADS`` environment variable."""
    cap = os.cpu_count() or 1
    env = os.environ.get("HMWV_THREADS")
    if env:
        try:
            cap = max(1, min(cap, int(env)))
        except ValueError:
            pass
    return cap
