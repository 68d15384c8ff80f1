"""Fixed-duration segmentation of a channel and alignment with its labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio_io import downsample
from .labelset import LabelVector


@dataclass
class SegmentMatrix:
    rows: np.ndarray
    segment_duration: float
    effective_rate: float

    @property
    def n_segments(self) -> int:
        return self.rows.shape[0]

    @property
    def samples_per_segment(self) -> int:
        return self.rows.shape[1]


@dataclass
class AlignedDataset:
    """Model inputs (one per segment) with their labels.

    ``segments`` is a 2-D sample matrix for dense and recurrent models, or a
    3-D ``(n, freq, time)`` spectrogram stack for the CNN.
    """

    segments: np.ndarray
    labels: LabelVector
    source_id: str = ""

    def __post_init__(self):
        if len(self.segments) != len(self.labels):
            raise ValueError(
                f"{self.source_id}: {len(self.segments)} segments vs {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.labels)


def samples_per_segment(effective_rate: float, segment_duration: float) -> int:
    # 44100 * 0.1 evaluates to 4410.000000000001; the guard protects the other direction
    return math.floor(effective_rate * segment_duration + 1e-9)


def segment_channel(
    channel: Sequence[float], effective_rate: float, segment_duration: float = 0.1
) -> SegmentMatrix:
    """Cut ``channel`` into consecutive rows of ``floor(rate * duration)`` samples.

    A trailing partial segment is discarded.
    """
    if segment_duration <= 0 or effective_rate <= 0:
        raise ValueError("segment_duration and effective_rate must be positive")
    w = samples_per_segment(effective_rate, segment_duration)
    if w == 0:
        raise ValueError(
            f"segment of {segment_duration}s at {effective_rate} Hz holds no samples"
        )
    x = np.asarray(channel, dtype=np.float64)
    n = len(x) // w
    return SegmentMatrix(x[: n * w].reshape(n, w).copy(), segment_duration, effective_rate)


def downsample_rows(segments: SegmentMatrix, rate: int) -> SegmentMatrix:
    """Decimate every row independently (residue of each row dropped)."""
    if rate < 1:
        raise ValueError(f"downsample rate must be >= 1, got {rate}")
    rows = segments.rows
    if rows.shape[0]:
        rows = np.stack([downsample(r, rate) for r in rows])
    else:
        rows = rows[:, : rows.shape[1] // rate]
    return SegmentMatrix(rows, segments.segment_duration, segments.effective_rate / rate)


def align(segments: SegmentMatrix | np.ndarray, labels: LabelVector,
          source_id: str = "") -> AlignedDataset:
    """Truncate segments and labels to their common length."""
    rows = segments.rows if isinstance(segments, SegmentMatrix) else np.asarray(segments)
    if len(rows) == 0 or len(labels) == 0:
        raise ValueError(f"{source_id or 'dataset'}: cannot align empty segments or labels")
    n = min(len(rows), len(labels))
    trimmed = LabelVector(labels.classes[:n], labels.scheme, labels.segment_duration)
    return AlignedDataset(rows[:n], trimmed, source_id)
