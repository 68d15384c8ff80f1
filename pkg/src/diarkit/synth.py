"""Synthetic two-speaker recordings with matching interval labels.

Each channel is one speaker's microphone: low-level white noise throughout,
plus voiced bursts made of three harmonics of that speaker's fundamental
under a slow amplitude envelope. Burst timing is random, redrawn until the
labeled speech fraction lands within 0.025 of the target, which leaves
room for segment truncation before the per-segment fraction strays 0.05.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, write_wav
from .labelset import IntervalRow, format_label_csv

SAMPLE_RATE = 44100
FRACTION_TOLERANCE = 0.025
HARMONIC_GAINS = (1.0, 0.6, 0.35)
FUNDAMENTAL_RANGES = ((100.0, 140.0), (180.0, 240.0))
MEAN_BURST = 2.5
MIN_INTERVAL = 0.25
FADE = 0.01


@dataclass(frozen=True)
class CorpusSpec:
    n_files: int = 10
    duration: float = 60.0
    speech_fraction: float = 0.4
    noise_dbfs: float = -50.0
    seed: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not 0.0 < self.speech_fraction < 1.0:
            raise ValueError("speech_fraction must lie strictly between 0 and 1")
        if self.duration < 1.0:
            raise ValueError("duration must be at least 1 s")
        if self.n_files < 1:
            raise ValueError("n_files must be positive")


def draw_intervals(rng, duration: float, fraction: float,
                   max_tries: int = 1000) -> list[tuple[float, float, bool]]:
    """Alternating (start, end, is_speech) intervals tiling ``[0, duration]``.

    Bursts shrink for short recordings so that several fit in the file.
    """
    burst = min(MEAN_BURST, duration * min(fraction, 1.0 - fraction) / 3)
    mean_gap = burst * (1.0 - fraction) / fraction
    shortest = min(MIN_INTERVAL, burst / 2, mean_gap / 2)
    for _ in range(max_tries):
        out = []
        t, speech = 0.0, False
        while t < duration:
            mean = burst if speech else mean_gap
            length = max(shortest, rng.uniform(0.4, 1.6) * mean)
            end = round(min(t + length, duration), 6)
            if duration - end < shortest:
                end = duration
            out.append((t, end, speech))
            t, speech = end, not speech
        talk = sum(b - a for a, b, s in out if s)
        if abs(talk / duration - fraction) <= FRACTION_TOLERANCE:
            return out
    raise RuntimeError(f"could not place bursts for speech fraction {fraction}")


def voiced_burst(rng, n: int, sample_rate: int, f0: float) -> np.ndarray:
    t = np.arange(n) / sample_rate
    f = f0 * rng.uniform(0.9, 1.1)
    x = sum(g * np.sin(2 * np.pi * (k + 1) * f * t + rng.uniform(0, 2 * np.pi))
            for k, g in enumerate(HARMONIC_GAINS))
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    fade = min(int(FADE * sample_rate), n // 2)
    if fade:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        env[:fade] *= ramp
        env[n - fade:] *= ramp[::-1]
    return x * env


def synth_channel(rng, spec: CorpusSpec, f0: float):
    n = int(round(spec.duration * spec.sample_rate))
    intervals = draw_intervals(rng, spec.duration, spec.speech_fraction)
    x = rng.normal(scale=10 ** (spec.noise_dbfs / 20), size=n)
    # recording level varies per microphone; normalization undoes it later
    level = 10 ** (rng.uniform(-30.0, -10.0) / 20)
    voice_rms = np.sqrt(sum(g * g for g in HARMONIC_GAINS) / 2 * (0.36 + 0.08))
    for a, b, speech in intervals:
        if not speech:
            continue
        i, j = int(round(a * spec.sample_rate)), int(round(b * spec.sample_rate))
        x[i:j] += level / voice_rms * voiced_burst(rng, j - i, spec.sample_rate, f0)
    return np.clip(x, -1.0, 1.0), intervals


def synth_file(spec: CorpusSpec, index: int) -> tuple[AudioClip, list[IntervalRow]]:
    rng = np.random.default_rng([spec.seed, index])
    channels, rows = [], []
    for k, (lo, hi) in enumerate(FUNDAMENTAL_RANGES):
        f0 = rng.uniform(lo, hi)
        x, intervals = synth_channel(rng, spec, f0)
        channels.append(x)
        rows += [IntervalRow(a, f"CH{k + 1}", "S" if s else "N", b) for a, b, s in intervals]
    rows.sort(key=lambda r: (r.tmin, r.tier))
    return AudioClip(spec.sample_rate, channels), rows


def synth_corpus(spec: CorpusSpec, out_dir) -> list[tuple[Path, Path]]:
    """Write ``file_NNN.wav`` / ``file_NNN.csv`` pairs; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = []
    for i in range(spec.n_files):
        clip, rows = synth_file(spec, i)
        wav, csv = out_dir / f"file_{i:03d}.wav", out_dir / f"file_{i:03d}.csv"
        write_wav(clip, wav)
        csv.write_text(format_label_csv(rows), encoding="utf-8")
        pairs.append((wav, csv))
    return pairs
