"""WAV decoding/encoding, RMS loudness, and naive decimation.

Only 16-bit PCM RIFF/WAVE files with one or two channels are handled.
Samples are held as float64 arrays in [-1, 1].
"""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

PCM_FORMAT = 1
# one scale both ways so decode(encode(decode(s))) == decode(s) for every int16
_SCALE = 32768.0


class AudioError(Exception):
    """Base class for audio decoding and loudness failures."""


class UnsupportedFormatError(AudioError):
    """Non-PCM data, wrong bit depth, or bad channel count."""


class TruncatedFileError(AudioError):
    """The data chunk (or a header) ends before its declared size."""


class SilentChannelError(AudioError):
    """Loudness of an empty or all-zero channel is undefined."""


@dataclass
class AudioClip:
    sample_rate: int
    channels: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not 1 <= len(self.channels) <= 2:
            raise ValueError(f"expected 1 or 2 channels, got {len(self.channels)}")
        self.channels = [np.asarray(c, dtype=np.float64) for c in self.channels]
        lengths = {len(c) for c in self.channels}
        if len(lengths) != 1:
            raise ValueError(f"channels have unequal lengths {sorted(lengths)}")

    @property
    def n_samples(self) -> int:
        return len(self.channels[0])

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def read_wav(path: str | os.PathLike) -> AudioClip:
    """Decode a PCM16 WAV file; integer sample ``s`` becomes ``s / 32768``.

    Chunks other than ``fmt `` and ``data`` are skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12:
        raise TruncatedFileError(f"{path}: file shorter than RIFF header")
    riff, _, wave = struct.unpack_from("<4sI4s", raw, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise UnsupportedFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id, size = struct.unpack_from("<4sI", raw, pos)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + 16 > len(raw):
                raise TruncatedFileError(f"{path}: fmt chunk truncated")
            fmt = struct.unpack_from("<HHIIHH", raw, body)
        elif chunk_id == b"data":
            if fmt is None:
                raise UnsupportedFormatError(f"{path}: data chunk precedes fmt chunk")
            return _decode_data(path, fmt, raw, body, size)
        pos = body + size + (size & 1)
    if fmt is None:
        raise UnsupportedFormatError(f"{path}: missing fmt chunk")
    raise TruncatedFileError(f"{path}: missing data chunk")


def _decode_data(path, fmt, raw: bytes, start: int, size: int) -> AudioClip:
    audio_format, n_channels, sample_rate, _, block_align, bits = fmt
    if audio_format != PCM_FORMAT:
        raise UnsupportedFormatError(f"{path}: audio format {audio_format} is not PCM")
    if bits != 16:
        raise UnsupportedFormatError(f"{path}: {bits}-bit samples unsupported (need 16)")
    if n_channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {n_channels} channels unsupported")
    if block_align != 2 * n_channels:
        raise UnsupportedFormatError(f"{path}: inconsistent block align {block_align}")
    if start + size > len(raw) or size % block_align:
        raise TruncatedFileError(
            f"{path}: data chunk declares {size} bytes, {len(raw) - start} present"
        )
    frames = np.frombuffer(raw, dtype="<i2", count=size // 2, offset=start)
    frames = frames.reshape(-1, n_channels).astype(np.float64) / _SCALE
    return AudioClip(sample_rate, [frames[:, k].copy() for k in range(n_channels)])


def encode_samples(samples: np.ndarray) -> np.ndarray:
    """Map amplitudes to int16 via ``round(a * 32768)`` clamped to the int16 range.

    Full scale +1.0 therefore stores as 32767.
    """
    ints = np.round(np.asarray(samples, dtype=np.float64) * _SCALE)
    return np.clip(ints, -32768, 32767).astype("<i2")


def write_wav(clip: AudioClip, path: str | os.PathLike) -> None:
    """Write ``clip`` as PCM16; the file is replaced atomically."""
    path = Path(path)
    n_channels = len(clip.channels)
    interleaved = np.stack([encode_samples(c) for c in clip.channels], axis=1)
    payload = interleaved.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, PCM_FORMAT, n_channels, clip.sample_rate,
        clip.sample_rate * 2 * n_channels, 2 * n_channels, 16,
        b"data", len(payload),
    )
    _atomic_write(path, header + payload)


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def measure_dbfs(channel: Sequence[float]) -> float:
    """RMS level in dB relative to full scale: ``20 log10(rms)``."""
    x = np.asarray(channel, dtype=np.float64)
    if x.size == 0:
        raise SilentChannelError("empty channel has no loudness")
    rms = np.sqrt(np.mean(x * x))
    if rms == 0.0:
        raise SilentChannelError("silent channel: loudness of all-zero samples is undefined")
    return 20.0 * np.log10(rms)


def gain_for(current_dbfs: float, target_dbfs: float) -> float:
    return 10.0 ** ((target_dbfs - current_dbfs) / 20.0)


def normalize_to_dbfs(clip: AudioClip, target: float = -20.0) -> AudioClip:
    """Scale each channel independently to an RMS level of ``target`` dBFS.

    Samples pushed outside [-1, 1] by the gain are clamped, with a warning.
    """
    out = []
    for k, ch in enumerate(clip.channels):
        g = gain_for(measure_dbfs(ch), target)
        scaled = ch * g
        peak = np.max(np.abs(scaled))
        if peak > 1.0:
            logger.warning("channel %d clips after %.2f dB gain (peak %.3f); clamping",
                           k, 20 * np.log10(g), peak)
            scaled = np.clip(scaled, -1.0, 1.0)
        out.append(scaled)
    return AudioClip(clip.sample_rate, out)


def downsample(channel: Sequence[float], rate: int) -> np.ndarray:
    """Keep the first sample of every complete group of ``rate`` samples.

    A trailing group shorter than ``rate`` is dropped entirely, so 4410
    samples at rate 4 give 1102.
    """
    if rate < 1:
        raise ValueError(f"downsample rate must be >= 1, got {rate}")
    x = np.asarray(channel)
    n = len(x) // rate
    return x[: n * rate : rate].copy()
