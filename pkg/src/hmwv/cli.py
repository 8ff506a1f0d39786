"""Command-line front end: ``hmwv {encode,decode,analyze,simulate,validate}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .balance import balance_profile
from .codec import CodecConfig, decode_layers, encode_detailed, load_config, snr
from .errors import HmwvError
from .figures import (INDEX_COLUMNS, PROFILE_COLUMNS, SNR_COLUMNS, index_curve, snr_sweep,
                      write_csv)
from .simgen import simulate_hybrid, simulate_tonal, simulate_transient
from .tonal import TonalParams
from .transforms import Signal
from .transient import TreeParams
from .validation import SUITES, run_suite
from .wavio import atomic_write, read_wav, write_wav

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    """Bad argument values detected after parsing (exit status 2)."""


def _add_codec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rate", type=float, help="target bit rate in kbps")
    p.add_argument("--frame", type=int, help="MDCT window length in samples (power of two)")
    p.add_argument("--depth", type=int, help="wavelet depth; must equal log2 of the frame length")
    p.add_argument("--alpha", type=float, help="exponent of the variance decay")
    p.add_argument("--n0", type=float, help="knee of the variance decay (bins)")
    p.add_argument("--seed", type=int, help="residual excitation seed")
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--lloyd-max", action="store_true", default=None, help="Lloyd-Max quantizers")
    p.add_argument("--no-decay", dest="decay", action="store_false", default=None,
                   help="free per-bin deviations instead of the decay form")
    p.add_argument("--untied", dest="tied", action="store_false", default=None,
                   help="per-bin transition probabilities")


def _codec_config(args) -> CodecConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    flags = {"rate": "rate_kbps", "frame": "window_length", "alpha": "alpha", "n0": "n0",
             "seed": "seed", "lloyd_max": "lloyd_max", "decay": "decay", "tied": "tied"}
    for flag, key in flags.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    try:
        cfg = CodecConfig.from_mapping(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    depth = getattr(args, "depth", None)
    if depth is not None and depth != cfg.depth:
        raise UsageError(f"--depth {depth} does not match the frame length {cfg.window_length} "
                         f"(depth {cfg.depth})")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmwv", description="Hybrid tonal/transient audio coder.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a WAV file")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_codec_flags(p)

    p = sub.add_parser("decode", help="decode a stream to WAV")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--reference", type=Path, help="WAV file to report the SNR against")
    p.add_argument("--layers", action="store_true",
                   help="also write <out>.tonal.wav, <out>.transient.wav and <out>.residual.wav")

    p = sub.add_parser("analyze", help="balance-index profile, SNR sweep or index curve as CSV")
    p.add_argument("input", type=Path, nargs="?")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--hop", type=int, help="profile hop in samples (default: half a frame)")
    p.add_argument("--sweep", help="comma-separated rates in kbps: emit an SNR-versus-rate CSV")
    p.add_argument("--index-curve", action="store_true",
                   help="emit the index-versus-|Delta| curve on simulated frames (no input)")
    p.add_argument("--realizations", type=int, default=10)
    _add_codec_flags(p)

    p = sub.add_parser("simulate", help="simulate a model signal; writes WAV plus a JSON sidecar")
    p.add_argument("--model", choices=("tonal", "transient", "hybrid"), required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frame", type=int, default=1024, help="window/frame length")
    p.add_argument("--frames", type=int, default=43, help="number of windows (tonal model)")
    p.add_argument("--depth", type=int, help="tree depth (transient model; default log2 frame)")
    p.add_argument("--rate-hz", type=int, default=44100, help="sample rate of the WAV file")

    p = sub.add_parser("validate", help="run the oracle suites")
    p.add_argument("--suite", choices=(*SUITES, "all"), default="all")
    p.add_argument("--seed", type=int, default=0)
    return parser


# --------------------------------------------------------------------------
# commands


def _cmd_encode(args) -> int:
    cfg = _codec_config(args)
    signal = read_wav(args.input)
    res = encode_detailed(signal, cfg)
    atomic_write(args.out, res.stream)
    duration = signal.samples.shape[0] / signal.sample_rate
    dec = decode_layers(res.stream)
    layers = dec.tonal.samples + dec.transient.samples
    print(f"wrote {args.out}: {len(res.stream)} bytes, {res.payload_bits / duration / 1000:.2f} kbps payload "
          f"(target {cfg.rate_kbps:g})")
    if np.any(signal.samples):
        print(f"snr tonal+transient {snr(signal, layers):.2f} dB, "
              f"with residual {snr(signal, dec.signal):.2f} dB")
    return 0


def _cmd_decode(args) -> int:
    data = args.input.read_bytes()
    dec = decode_layers(data)
    write_wav(args.out, dec.signal)
    if args.layers:
        stem = args.out.with_suffix("")
        for name in ("tonal", "transient", "residual"):
            write_wav(f"{stem}.{name}.wav", getattr(dec, name))
    print(f"wrote {args.out}: {dec.signal.samples.shape[0]} samples at {dec.signal.sample_rate} Hz")
    if args.reference:
        ref = read_wav(args.reference)
        n = min(ref.samples.shape[0], dec.signal.samples.shape[0])
        layers = dec.tonal.samples[:n] + dec.transient.samples[:n]
        print(f"snr tonal+transient {snr(ref.samples[:n], layers):.2f} dB, "
              f"with residual {snr(ref.samples[:n], dec.signal.samples[:n]):.2f} dB")
    return 0


def _cmd_analyze(args) -> int:
    cfg = _codec_config(args)
    if args.index_curve:
        rows = index_curve(realizations=args.realizations, frame_length=cfg.window_length,
                           wavelet=cfg.wavelet, seed=cfg.seed)
        write_csv(args.out, INDEX_COLUMNS, rows)
    else:
        if args.input is None:
            raise UsageError("analyze needs an input file unless --index-curve is given")
        signal = read_wav(args.input)
        if args.sweep:
            try:
                rates = [float(r) for r in args.sweep.split(",") if r.strip()]
            except ValueError as exc:
                raise UsageError(f"bad --sweep list {args.sweep!r}") from exc
            write_csv(args.out, SNR_COLUMNS, snr_sweep(signal, rates, cfg))
        else:
            rows = balance_profile(signal, cfg.window_length, args.hop, cfg.wavelet)
            write_csv(args.out, PROFILE_COLUMNS, rows)
    print(f"wrote {args.out}")
    return 0


def _fit_to_wav(x: np.ndarray):
    """Scale so that the 16-bit file does not clip; returns (samples, gain)."""
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    gain = 1.0 if peak <= 0.99 else 0.99 / peak
    return x * gain, gain


def _cmd_simulate(args) -> int:
    ell = args.frame
    if ell < 2 or ell & (ell - 1):
        raise UsageError("--frame must be a power of two")
    truth = {"model": args.model, "seed": args.seed, "sample_rate": args.rate_hz}
    if args.model == "tonal":
        params = TonalParams.from_decay(ell, 0.95, 0.9984, 0.2, 0.002)
        sig, tmap, _ = simulate_tonal(params, args.frames, args.seed, ell, args.rate_hz)
        x = sig.samples
        truth["params"] = {"pi_t": 0.95, "pi_r": 0.9984, "sigma_t": 0.2, "sigma_r": 0.002,
                           "n0": ell / 8, "alpha": 1.0, "bands": ell, "windows": args.frames}
        truth["tonal_map"] = [[int(k), int(n)] for k, n in zip(*np.nonzero(tmap.mask))]
    elif args.model == "transient":
        J = args.depth if args.depth is not None else ell.bit_length() - 1
        if not 1 <= J <= 24:
            raise UsageError("--depth must lie in 1..24")
        sig_t = 0.01 * 2.0 ** (np.arange(1, J + 1) / 2)
        params = TreeParams(0.9, 0.6, sig_t, np.full(J, 0.0005))
        x, tmap, _ = simulate_transient(params, args.seed)
        truth["params"] = {"nu": 0.9, "pi": 0.6, "sigma_t": sig_t.tolist(), "sigma_r": 0.0005,
                           "depth": J}
        truth["transient_map"] = [list(p) for p in tmap.indices()]
    else:
        sig, lam, delta = simulate_hybrid(0.1, 0.1, 40, 40, ell, args.seed)
        x = sig.samples
        truth["params"] = {"sigma": 0.1, "sigma_tilde": 0.1, "size_lambda": 40, "size_delta": 40,
                           "frame_length": ell}
        truth["lambda"] = lam.tolist()
        truth["delta"] = delta.tolist()
    x, gain = _fit_to_wav(np.asarray(x, dtype=float))
    truth["gain"] = gain
    write_wav(args.out, Signal(x, args.rate_hz))
    sidecar = args.out.with_suffix(".json")
    atomic_write(sidecar, (json.dumps(truth, indent=1) + "\n").encode("utf-8"))
    print(f"wrote {args.out} and {sidecar}")
    return 0


def _cmd_validate(args) -> int:
    failed = 0
    for result in run_suite(args.suite, args.seed):
        print(result.line(), flush=True)
        failed += not result.passed
    print(f"{'FAILED' if failed else 'OK'}: {failed} failing check(s)")
    return 1 if failed else 0


_COMMANDS = {"encode": _cmd_encode, "decode": _cmd_decode, "analyze": _cmd_analyze,
             "simulate": _cmd_simulate, "validate": _cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hmwv: error: {exc}", file=sys.stderr)
        return 2
    except (HmwvError, OSError, ValueError, EOFError) as exc:
        print(f"hmwv: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
