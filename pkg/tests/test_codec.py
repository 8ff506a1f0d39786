import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import lfilter
from scipy.stats import norm

from hmwv.bitio import BitReader, BitWriter
from hmwv.codec import (Bitstream, CodecConfig, Header, decode, decode_layers, decode_runlengths, encode,
                        encode_detailed, encode_runlengths, golomb_parameter, lpc_encode, parse_config,
                        snr)
from hmwv.codec.bitstream import (SECTIONS, decode_prob, decode_reflection, decode_sigma, encode_prob,
                                  encode_reflection, encode_sigma)
from hmwv.codec.config import thread_count
from hmwv.codec.entropy import read_golomb, run_lengths, write_golomb
from hmwv.codec.lpc import levinson_durbin, lpc_decode, lpc_to_reflection, reflection_to_lpc
from hmwv.codec.quant import (dequantize, dequantize_lloyd, lloyd_max_table, quantize, quantize_lloyd)
from hmwv.errors import BitstreamError, BudgetError
from hmwv.simgen import simulate_tonal
from hmwv.tonal import TonalParams
from hmwv.transforms import Signal

# -- quantizers ---------------------------------------------------------------


def test_uniform_midtread_zero_and_range():
    assert dequantize(quantize(0.0, 1.0, 4), 1.0, 4) == 0.0
    assert quantize(100.0, 1.0, 3) == 7
    assert quantize(-100.0, 1.0, 3) == 0
    assert quantize(3.0, 1.0, 0) == 0 and dequantize(0, 1.0, 0) == 0.0
    with pytest.raises(ValueError):
        quantize(1.0, 0.0, 3)
    with pytest.raises(ValueError):
        dequantize(8, 1.0, 3)


@given(st.floats(-3.9, 3.9), st.integers(1, 16))
def test_uniform_error_within_half_step(v, bits):
    step = 8.0 / 2**bits
    err = abs(dequantize(quantize(v, 1.0, bits), 1.0, bits) - v)
    assert err <= step / 2 + 1e-12 or v >= 4.0 - step


def test_lloyd_one_bit_levels():
    _, levels = lloyd_max_table(1)
    assert levels[1] == pytest.approx(math.sqrt(2 / math.pi), abs=1e-9)


def test_lloyd_two_bit_distortion():
    # classical value of the 4-level Gaussian Lloyd-Max quantizer
    thresholds, levels = lloyd_max_table(2)
    edges = np.concatenate([[-np.inf], thresholds, [np.inf]])
    mse = 1.0
    for a, b, c in zip(edges[:-1], edges[1:], levels):
        mass = norm.cdf(b) - norm.cdf(a)
        mse -= c * c * mass
    assert mse == pytest.approx(0.1175, abs=5e-5)


def test_lloyd_roundtrip(rng):
    v = rng.standard_normal(1000) * 2.0
    idx = quantize_lloyd(v, 2.0, 3)
    assert idx.min() >= 0 and idx.max() <= 7
    assert np.mean((dequantize_lloyd(idx, 2.0, 3) - v) ** 2) < 0.05 * 4.0


# -- bit I/O ------------------------------------------------------------------


@given(st.lists(st.tuples(st.integers(0, 2**20 - 1), st.integers(20, 24)), max_size=20))
def test_bitio_uint_roundtrip(items):
    w = BitWriter()
    for v, width in items:
        w.write_uint(v, width)
    r = BitReader.from_bytes(w.to_bytes(), len(w))
    assert [r.read_uint(width) for _, width in items] == [v for v, _ in items]
    assert r.remaining() == 0


def test_bitio_errors():
    with pytest.raises(ValueError):
        BitWriter().write_uint(4, 2)
    r = BitReader.from_bits([1, 1])
    with pytest.raises(EOFError):
        r.read_uint(3)
    with pytest.raises(ValueError):
        BitReader.from_bits([1, 1, 1, 1]).read_unary(limit=2)


# -- run-length coding --------------------------------------------------------


def test_golomb_parameter_examples():
    assert golomb_parameter(0.5) == 1
    assert golomb_parameter(0.9) == 7
    assert golomb_parameter(0.0) == 1
    with pytest.raises(ValueError):
        golomb_parameter(1.0)


@given(st.integers(0, 500), st.integers(1, 40))
def test_golomb_roundtrip(n, m):
    w = BitWriter()
    write_golomb(w, n, m)
    assert read_golomb(BitReader.from_bits(w.bits()), m) == n


def test_run_lengths():
    assert run_lengths([1, 1, 0, 0, 0, 1]) == [2, 3, 1]
    assert run_lengths([]) == []


@given(st.lists(st.booleans(), max_size=200), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
def test_runlength_roundtrip(states, pt, pr):
    bits = encode_runlengths(states, pt, pr)
    assert decode_runlengths(bits, len(states), pt, pr).tolist() == states


def test_runlength_rejects_overrun_and_trailing():
    bits = encode_runlengths([True] * 5, 0.9, 0.9)
    with pytest.raises(BitstreamError) as exc:
        decode_runlengths(bits, 3, 0.9, 0.9)
    assert exc.value.section == "tonal-map"
    with pytest.raises(BitstreamError):
        decode_runlengths(np.concatenate([bits, [0]]), 5, 0.9, 0.9)


# -- LPC ----------------------------------------------------------------------


def test_levinson_recovers_ar2(rng):
    a = np.array([1.0, -0.9, 0.4])
    x = lfilter([1.0], a, rng.standard_normal(20000))
    k, gain = lpc_encode(x, 2)
    assert np.allclose(reflection_to_lpc(k), a, atol=0.03)
    assert gain == pytest.approx(1.0, rel=0.05)


def test_reflection_lpc_roundtrip():
    k = np.array([0.5, -0.3, 0.8, 0.1])
    assert np.allclose(lpc_to_reflection(reflection_to_lpc(k)), k)


def test_lpc_silence_and_short_frame():
    k, gain = lpc_encode(np.zeros(64), 4)
    assert gain == 0.0 and not np.any(k)
    with pytest.raises(ValueError):
        lpc_encode(np.ones(4), 4)
    from hmwv.errors import DegenerateInputError
    with pytest.raises(DegenerateInputError):
        levinson_durbin(np.zeros(3), 2)


def test_lpc_decode_is_seeded():
    a = lpc_decode([0.5, 0.2], 0.3, 32, np.random.default_rng(1))
    b = lpc_decode([0.5, 0.2], 0.3, 32, np.random.default_rng(1))
    assert np.array_equal(a, b)


# -- scalar codes and container -----------------------------------------------


@given(st.floats(1e-15, 1e15))
def test_sigma_code_relative_error(s):
    assert decode_sigma(encode_sigma(s)) == pytest.approx(s, rel=2 ** (1 / 1024) - 1 + 1e-12)


def test_scalar_codes():
    assert encode_sigma(0.0) == 0 and decode_sigma(0) == 0.0
    assert decode_prob(encode_prob(0.9)) == pytest.approx(0.9, abs=1 / 8190)
    k = np.linspace(-0.99, 0.99, 11)
    assert np.max(np.abs(decode_reflection(encode_reflection(k)) - k)) < math.pi / 256


def test_header_roundtrip_and_checks():
    h = Header(8000, 256, 8, 17, 32, 5, 99)
    assert Header.unpack(h.pack()) == h
    assert h.signal_length == 5 * 256 - 17
    with pytest.raises(BitstreamError):
        Header.unpack(b"XXXX" + h.pack()[4:])
    with pytest.raises(BitstreamError):
        Header.unpack(h.pack()[:5])


def test_config_parsing(tmp_path):
    values = parse_config("rate_kbps = 32  # comment\n\nlloyd-max = yes\nn0 = none\n")
    cfg = CodecConfig.from_mapping(values)
    assert cfg.rate_kbps == 32.0 and cfg.lloyd_max and cfg.n0 is None
    with pytest.raises(ValueError):
        CodecConfig.from_mapping({"bogus": "1"})
    with pytest.raises(ValueError):
        parse_config("no equals sign")
    with pytest.raises(ValueError):
        CodecConfig(window_length=100)
    with pytest.raises(ValueError):
        CodecConfig(selection="best")


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("HMWV_THREADS", "1")
    assert thread_count() == 1
    monkeypatch.setenv("HMWV_THREADS", "junk")
    assert thread_count() >= 1


def test_snr():
    x = np.array([1.0, -1.0, 2.0])
    assert snr(x, x) == 200.0
    assert snr(x, 0.9 * x) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        snr(np.zeros(3), x)


# -- encoder / decoder --------------------------------------------------------

SMALL = CodecConfig(window_length=256, rate_kbps=32)


@pytest.fixture(scope="module")
def tonal_signal():
    p = TonalParams.from_decay(256, 0.95, 0.99, 0.5, 0.0005)
    sig, _, _ = simulate_tonal(p, 32, seed=3, sample_rate=8000)
    return sig


def test_silence_gives_empty_maps_and_silence():
    x = Signal(np.zeros(2000), 8000)
    res = encode_detailed(x, SMALL)
    assert len(res.layers.tonal_map) == 0
    assert all(len(m) == 0 for m in res.layers.transient_maps)
    out = decode(res.stream)
    assert out.samples.shape == (2000,)
    assert not np.any(out.samples)


def test_tonal_signal_generous_budget(tonal_signal):
    res = encode_detailed(tonal_signal, SMALL.replace(rate_kbps=64))
    dec = decode_layers(res.stream)
    assert snr(tonal_signal, dec.tonal.samples + dec.transient.samples) >= 30.0


@pytest.mark.parametrize("rate", [16, 32, 64])
def test_payload_within_budget(tonal_signal, rate):
    res = encode_detailed(tonal_signal, SMALL.replace(rate_kbps=rate))
    assert abs(res.payload_bits / res.target_bits - 1) <= 0.02
    assert res.payload_bits <= res.target_bits


def test_layers_add_up(tonal_signal):
    res = encode_detailed(tonal_signal, SMALL)
    L = res.layers
    total = L.tonal.samples + L.transient.samples + L.residual.samples
    assert np.max(np.abs(total - tonal_signal.samples)) <= 1e-9


def test_streams_are_deterministic(tonal_signal):
    assert encode(tonal_signal, SMALL) == encode(tonal_signal, SMALL)
    stream = encode(tonal_signal, SMALL)
    assert np.array_equal(decode(stream).samples, decode(stream).samples)


def test_functional_mode_retains_fraction(tonal_signal):
    cfg = SMALL.replace(quantize=False, retain_fraction=0.06)
    res = encode_detailed(tonal_signal, cfg)
    L = res.layers
    kept = len(L.tonal_map) + sum(len(m) for m in L.transient_maps)
    assert abs(kept - 0.06 * 32 * 256) <= 2
    total = L.tonal.samples + L.transient.samples + L.residual.samples
    assert np.max(np.abs(total - tonal_signal.samples)) <= 1e-9


def test_unquantized_roundtrip_matches_encoder_layers(tonal_signal):
    res = encode_detailed(tonal_signal, SMALL.replace(quantize=False, retain_fraction=0.2))
    dec = decode_layers(res.stream)
    assert np.max(np.abs(dec.tonal.samples - res.layers.tonal.samples)) <= 1e-6
    assert np.max(np.abs(dec.transient.samples - res.layers.transient.samples)) <= 1e-6
    assert np.array_equal(dec.tonal_mask, res.layers.tonal_map.mask)


def test_alternative_paths(tonal_signal):
    for cfg in (SMALL.replace(lloyd_max=True), SMALL.replace(tied=False), SMALL.replace(selection="search")):
        res = encode_detailed(tonal_signal, cfg)
        dec = decode_layers(res.stream)
        assert snr(tonal_signal, dec.tonal.samples + dec.transient.samples) > 25.0


def test_free_deviations_still_code_a_layer(tonal_signal):
    # per-bin deviations are poorly identified on 32 windows, but the layer must not vanish
    res = encode_detailed(tonal_signal, SMALL.replace(decay=False))
    dec = decode_layers(res.stream)
    assert len(res.layers.tonal_map) > 0
    assert np.max(np.abs(dec.tonal.samples - res.layers.tonal.samples)) <= 1e-9


def test_decoded_tonal_matches_encoder_side(tonal_signal):
    res = encode_detailed(tonal_signal, SMALL)
    dec = decode_layers(res.stream)
    assert np.max(np.abs(dec.tonal.samples - res.layers.tonal.samples)) <= 1e-9
    assert np.max(np.abs(dec.transient.samples - res.layers.transient.samples)) <= 1e-9


def test_budget_too_low():
    x = Signal(np.random.default_rng(0).standard_normal(4096), 8000)
    with pytest.raises(BudgetError) as exc:
        encode(x, SMALL.replace(rate_kbps=0.1))
    assert exc.value.minimum_kbps > 0.1


def test_truncated_stream_names_section(tonal_signal):
    stream = encode(tonal_signal, SMALL)
    with pytest.raises(BitstreamError) as exc:
        decode(stream[:-5])
    assert "lpc" in str(exc.value)
    with pytest.raises(BitstreamError) as exc:
        decode(stream + b"\0")
    assert exc.value.section == "container"


def test_corrupt_section_names_section(tonal_signal):
    bs = Bitstream.from_bytes(encode(tonal_signal, SMALL))
    for i, name in enumerate(SECTIONS):
        sections = list(bs.superframes[0])
        sections[i] = sections[i][:1]
        bad = Bitstream(bs.header, (tuple(sections),) + bs.superframes[1:]).to_bytes()
        with pytest.raises(BitstreamError) as exc:
            decode(bad)
        assert exc.value.section == name
