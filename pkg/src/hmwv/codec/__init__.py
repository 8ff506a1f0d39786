"""Hybrid tonal/transient/residual codec."""

from .bitstream import Bitstream, Header
from .config import CodecConfig, load_config, parse_config
from .decoder import DecodedLayers, decode, decode_layers
from .encoder import EncodeResult, LayerDecomposition, encode, encode_detailed, snr
from .entropy import decode_runlengths, encode_runlengths, golomb_parameter
from .lpc import lpc_decode, lpc_encode
from .quant import dequantize, quantize, rd_gaussian

__all__ = [
    "Bitstream", "Header", "CodecConfig", "load_config", "parse_config", "DecodedLayers",
    "decode", "decode_layers", "EncodeResult", "LayerDecomposition", "encode", "encode_detailed",
    "snr", "decode_runlengths", "encode_runlengths", "golomb_parameter", "lpc_decode",
    "lpc_encode", "dequantize", "quantize", "rd_gaussian",
]
