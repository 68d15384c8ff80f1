"""Turning a (wav, csv) pair into per-channel model inputs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import normalize_to_dbfs, read_wav
from .features import StftParams, power_spectrogram
from .labelset import (BINARY, FOUR_CLASS, clean_intervals, intervals_to_labels,
                       merge_four_class, read_label_csv)
from .segmenter import AlignedDataset, align, downsample_rows, segment_channel


@dataclass(frozen=True)
class PrepConfig:
    segment_sec: float = 0.1
    downsample: int = 4
    target_dbfs: float | None = -20.0
    classes: int = 2


def file_id(path) -> str:
    return Path(path).stem


def prepare_clip(clip, table, config: PrepConfig = PrepConfig(), fid: str = "file"):
    """Per-channel aligned datasets for one recording and its cleaned label table.

    Segmentation happens at the original rate; each row is then decimated,
    so 4410-sample segments become 1102 samples at rate 4.
    """
    if config.target_dbfs is not None:
        clip = normalize_to_dbfs(clip, config.target_dbfs)
    matrices = [downsample_rows(segment_channel(ch, clip.sample_rate, config.segment_sec),
                                config.downsample) for ch in clip.channels]
    tiers = ["CH1", "CH2"][: len(clip.channels)]
    labels = [intervals_to_labels(table, tier, m.n_segments, config.segment_sec)
              for tier, m in zip(tiers, matrices)]
    if config.classes == 4:
        if len(labels) != 2:
            raise ValueError(f"{fid}: four-class labels need two channels")
        merged = merge_four_class(*labels)
        labels = [merged, merged]
    elif config.classes != 2:
        raise ValueError(f"classes must be 2 or 4, got {config.classes}")
    return [align(m, lab, f"{fid}:{tier}") for m, lab, tier in zip(matrices, labels, tiers)]


def prepare_pair(wav_path, csv_path, config: PrepConfig = PrepConfig()) -> list[AlignedDataset]:
    table = clean_intervals(read_label_csv(csv_path))
    return prepare_clip(read_wav(wav_path), table, config, file_id(wav_path))


def spectrogram_dataset(ds: AlignedDataset, effective_rate: float,
                        params: StftParams = StftParams()) -> AlignedDataset:
    feats = power_spectrogram(ds.segments, effective_rate, params)
    return AlignedDataset(feats, ds.labels, ds.source_id)


def find_pairs(data_dir) -> list[tuple[Path, Path]]:
    """All ``X.wav`` in a directory that have a sibling ``X.csv``, sorted by name."""
    data_dir = Path(data_dir)
    return [(w, w.with_suffix(".csv")) for w in sorted(data_dir.glob("*.wav"))
            if w.with_suffix(".csv").exists()]


def label_scheme(classes: int) -> str:
    return BINARY if classes == 2 else FOUR_CLASS


def stack(datasets: list[AlignedDataset]) -> tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([d.segments for d in datasets])
    y = np.concatenate([d.labels.classes for d in datasets])
    return x, y
