"""16-bit PCM WAV input/output on top of the standard ``wave`` module."""

from __future__ import annotations

import os
import tempfile
import wave
from pathlib import Path

import numpy as np

from .transforms import Signal

__all__ = ["read_wav", "write_wav", "wav_bytes", "atomic_write"]

_FULL_SCALE = 32768.0


def read_wav(path) -> Signal:
    """Read a PCM WAV file; multichannel input is averaged to mono.

    Samples are scaled to [-1, 1).  8-, 16-, 24- and 32-bit integer PCM are
    accepted.
    """
    with wave.open(str(path), "rb") as wf:
        channels = wf.getnchannels()
        width = wf.getsampwidth()
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    if width == 1:
        data = (np.frombuffer(raw, dtype=np.uint8).astype(float) - 128.0) / 128.0
    elif width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(float) / _FULL_SCALE
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        data = v.astype(float) / float(1 << 23)
    elif width == 4:
        data = np.frombuffer(raw, dtype="<i4").astype(float) / float(1 << 31)
    else:
        raise ValueError(f"unsupported sample width {width}")
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return Signal(np.ascontiguousarray(data), rate)


def wav_bytes(signal: Signal) -> bytes:
    """16-bit mono WAV encoding of ``signal`` (clipped to full scale)."""
    import io

    pcm = np.clip(np.round(signal.samples * _FULL_SCALE), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(signal.sample_rate))
        wf.writeframes(pcm.tobytes())
    return buf.getvalue()


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_wav(path, signal: Signal) -> None:
    atomic_write(path, wav_bytes(signal))
