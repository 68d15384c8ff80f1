"""Per-segment power spectrograms and their on-disk cache.

Frames are 256 samples with a hop of 224 under a Tukey(0.25) window and
are scaled as a one-sided power spectral density. A 1102-sample segment
gives a 129 x 4 spectrogram. Frames are not detrended.

Cache layout (little-endian)::

    b"DKFC" | u32 version | u32 window | u32 hop | u32 nfft | u32 window_code
    u32 n_entries
    per entry: u16 id_len | id utf-8 | u32 n | u32 h | u32 w | float32[n*h*w]
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DKFC"
VERSION = 1
WINDOW_CODES = {"tukey": 1, "hann": 2, "boxcar": 3}
TUKEY_ALPHA = 0.25


class CacheError(Exception):
    pass


@dataclass(frozen=True)
class StftParams:
    window: int = 256
    hop: int = 224
    nfft: int = 256
    window_kind: str = "tukey"

    @property
    def height(self) -> int:
        return self.nfft // 2 + 1

    def n_frames(self, length: int) -> int:
        if length < self.window:
            return 0
        return 1 + (length - self.window) // self.hop


def window_values(kind: str, n: int) -> np.ndarray:
    """Periodic window of length ``n``."""
    if kind == "boxcar":
        return np.ones(n)
    if kind == "hann":
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    if kind == "tukey":
        # periodic Tukey: symmetric window of n+1 points with the last dropped
        m = n + 1
        x = np.arange(m) / (m - 1)
        w = np.ones(m)
        a = TUKEY_ALPHA
        lo = x < a / 2
        hi = x > 1 - a / 2
        w[lo] = 0.5 * (1 + np.cos(np.pi * (2 * x[lo] / a - 1)))
        w[hi] = 0.5 * (1 + np.cos(np.pi * (2 * x[hi] / a - 2 / a + 1)))
        return w[:n]
    raise ValueError(f"unknown window kind {kind!r}")


@dataclass
class Spectrogram:
    magnitudes: np.ndarray
    bin_hz: float


def frames(x: np.ndarray, params: StftParams) -> np.ndarray:
    """``(..., n_frames, window)`` view of ``x`` split along its last axis."""
    n = params.n_frames(x.shape[-1])
    view = np.lib.stride_tricks.sliding_window_view(x, params.window, axis=-1)
    return view[..., : (n - 1) * params.hop + 1 : params.hop, :]


def power_spectrogram(
    x: np.ndarray, sample_rate: float = 1.0, params: StftParams = StftParams()
) -> np.ndarray:
    """One-sided PSD of the last axis; returns ``(..., freq, time)``.

    Works on a single segment or a stack of segments at once.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < params.window:
        raise ValueError(
            f"segment of {x.shape[-1]} samples is shorter than the {params.window}-sample window"
        )
    win = window_values(params.window_kind, params.window)
    spec = np.fft.rfft(frames(x, params) * win, n=params.nfft, axis=-1)
    psd = (spec.real ** 2 + spec.imag ** 2) / (sample_rate * np.sum(win ** 2))
    # fold negative frequencies; DC (and Nyquist for even nfft) are unpaired
    psd[..., 1:] *= 2
    if params.nfft % 2 == 0:
        psd[..., -1] /= 2
    return np.swapaxes(psd, -1, -2)


def spectrogram(segment, sample_rate: float = 11025.0,
                params: StftParams = StftParams()) -> Spectrogram:
    return Spectrogram(power_spectrogram(segment, sample_rate, params),
                       sample_rate / params.nfft)


def log_power(psd: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    return np.log10(np.maximum(psd, floor))


@dataclass
class FeatureCache:
    params: StftParams = field(default_factory=StftParams)
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, source_id: str, stack: np.ndarray) -> None:
        stack = np.asarray(stack, dtype=np.float32)
        if stack.ndim != 3:
            raise CacheError(f"{source_id}: expected (n, freq, time) array, got {stack.shape}")
        self.entries[source_id] = stack

    def merge(self, other: FeatureCache) -> None:
        if other.params != self.params:
            raise CacheError(f"STFT parameter mismatch: {self.params} vs {other.params}")
        self.entries.update(other.entries)

    def __eq__(self, other):
        if not isinstance(other, FeatureCache):
            return NotImplemented
        return (self.params == other.params
                and self.entries.keys() == other.entries.keys()
                and all(np.array_equal(v, other.entries[k]) for k, v in self.entries.items()))


def cache_bytes(cache: FeatureCache) -> bytes:
    p = cache.params
    parts = [MAGIC, struct.pack("<IIIIII", VERSION, p.window, p.hop, p.nfft,
                                WINDOW_CODES[p.window_kind], len(cache.entries))]
    for key, arr in cache.entries.items():
        name = key.encode("utf-8")
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<III", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def cache_write(cache: FeatureCache, path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(cache_bytes(cache))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _unpack(fmt: str, buf: bytes, pos: int):
    size = struct.calcsize(fmt)
    if pos + size > len(buf):
        raise CacheError("feature cache is truncated")
    return struct.unpack_from(fmt, buf, pos), pos + size


def cache_from_bytes(buf: bytes) -> FeatureCache:
    if buf[:4] != MAGIC:
        raise CacheError("not a feature cache (bad magic)")
    (version, window, hop, nfft, code, count), pos = _unpack("<IIIIII", buf, 4)
    if version != VERSION:
        raise CacheError(f"unsupported feature cache version {version}")
    kinds = {v: k for k, v in WINDOW_CODES.items()}
    if code not in kinds:
        raise CacheError(f"unknown window code {code}")
    cache = FeatureCache(StftParams(window, hop, nfft, kinds[code]))
    for _ in range(count):
        (n_name,), pos = _unpack("<H", buf, pos)
        if pos + n_name > len(buf):
            raise CacheError("feature cache is truncated")
        name = buf[pos: pos + n_name].decode("utf-8")
        pos += n_name
        dims, pos = _unpack("<III", buf, pos)
        nbytes = 4 * dims[0] * dims[1] * dims[2]
        if pos + nbytes > len(buf):
            raise CacheError(f"feature cache is truncated inside entry {name!r}")
        arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos)
        cache.entries[name] = arr.reshape(dims).astype(np.float32)
        pos += nbytes
    return cache


def cache_read(path) -> FeatureCache:
    return cache_from_bytes(Path(path).read_bytes())
