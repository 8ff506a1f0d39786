"""Figure data as CSV: SNR-versus-rate sweeps and balance-index curves."""

from __future__ import annotations

import csv
import io

import numpy as np

from .balance import analyze_frame
from .codec import CodecConfig, decode_layers, encode_detailed, snr
from .simgen import simulate_hybrid
from .wavio import atomic_write

__all__ = ["SNR_COLUMNS", "INDEX_COLUMNS", "PROFILE_COLUMNS", "snr_sweep", "index_curve", "to_csv",
           "write_csv"]

SNR_COLUMNS = ("rate_kbps", "payload_kbps", "snr_layers_db", "snr_total_db", "tonal_coeffs",
               "transient_nodes")
INDEX_COLUMNS = ("size_lambda", "size_delta", "index_tonal_mean", "index_tonal_std", "index_tonal_ratio")
PROFILE_COLUMNS = ("time_s", "index_tonal", "index_transient")


def snr_sweep(signal, rates, config: CodecConfig | None = None):
    """Encode ``signal`` at each rate in ``rates`` (kbps) and measure SNR.

    ``snr_layers_db`` compares the decoded tonal + transient layers with the
    input; ``snr_total_db`` includes the synthesised residual.
    """
    cfg = config or CodecConfig()
    x = signal.samples
    duration = x.shape[0] / signal.sample_rate
    rows = []
    for rate in rates:
        res = encode_detailed(signal, cfg.replace(rate_kbps=float(rate)))
        dec = decode_layers(res.stream)
        layers = dec.tonal.samples + dec.transient.samples
        rows.append((float(rate), res.payload_bits / duration / 1000.0, snr(x, layers),
                     snr(x, dec.signal.samples), int(dec.tonal_mask.sum()),
                     int(sum(len(m) for m in dec.transient_maps))))
    return rows


def index_curve(size_lambda: int = 40, deltas=range(0, 201, 10), realizations: int = 10,
                frame_length: int = 1024, sigma: float = 1.0, sigma_tilde: float = 1.0,
                seed: int = 0, wavelet: str = "db8"):
    """Mean estimated tonal index against ``|Delta|`` on hybrid-model frames.

    Realization ``r`` at ``|Delta| = d`` uses seed ``(seed, d, r)``.  The last
    column is the size ratio ``|Delta| / (|Delta| + |Lambda|)`` that the index
    is meant to track.
    """
    rows = []
    for d in deltas:
        vals = []
        for r in range(realizations):
            sub = int(np.random.SeedSequence((seed, int(d), r)).generate_state(1)[0])
            x, _, _ = simulate_hybrid(sigma, sigma_tilde, size_lambda, int(d), frame_length, sub, wavelet)
            if not np.any(x.samples):
                continue
            vals.append(analyze_frame(x, wavelet).index_tonal)
        total = size_lambda + d
        ratio = d / total if total else float("nan")
        mean = float(np.mean(vals)) if vals else float("nan")
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else float("nan")
        rows.append((size_lambda, int(d), mean, std, ratio))
    return rows


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    atomic_write(path, to_csv(columns, rows).encode("utf-8"))
