"""Interval label CSVs: parsing, cleaning, and conversion to per-segment classes.

A label file looks like::

    tmin,tier,text,tmax
    0,CH2,N,1.361079
    1.361079,CH2,S,4.996529

``tier`` names the channel and ``text`` is ``S`` (speech) or ``N``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, TextIO

import numpy as np

logger = logging.getLogger(__name__)

COLUMNS = ("tmin", "tier", "text", "tmax")
BINARY = "binary"
FOUR_CLASS = "four_class"

DEFAULT_TIER_ALIASES: dict[str, str] = {
    "CH1": "CH1", "CH 1": "CH1", "CHANNEL1": "CH1",
    "CH2": "CH2", "CH 2": "CH2", "CHANNEL2": "CH2",
}

# keeps 0.3/0.1 -> 3 rather than 2.9999999999999996
_FLOOR_GUARD = 1e-9


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class IntervalRow:
    tmin: float
    tier: str
    text: str
    tmax: float


@dataclass
class IntervalTable:
    rows: list[IntervalRow] = field(default_factory=list)
    dropped: int = 0

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def tier(self, name: str) -> list[IntervalRow]:
        return [r for r in self.rows if r.tier == name]


@dataclass
class LabelVector:
    classes: np.ndarray
    scheme: str = BINARY
    segment_duration: float = 0.1

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int64)
        allowed = {BINARY: 2, FOUR_CLASS: 4}.get(self.scheme)
        if allowed is None:
            raise LabelError(f"unknown label scheme {self.scheme!r}")
        if self.classes.size and (self.classes.min() < 0 or self.classes.max() >= allowed):
            raise LabelError(f"{self.scheme} labels must lie in [0, {allowed - 1}]")

    def __len__(self):
        return len(self.classes)

    @property
    def n_classes(self) -> int:
        return 2 if self.scheme == BINARY else 4


def parse_label_csv(text: str | TextIO) -> IntervalTable:
    """Parse label CSV text (or an open text stream) into raw rows.

    Columns may come in any order; extra columns are ignored. No cleaning
    happens here beyond stripping a byte-order mark from the header.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise LabelError("label CSV is empty (no header row)") from None
    names = [h.replace("\ufeff", "").strip().lower() for h in header]
    missing = [c for c in COLUMNS if c not in names]
    if missing:
        raise LabelError(f"label CSV header lacks column(s): {', '.join(missing)}")
    idx = {c: names.index(c) for c in COLUMNS}

    rows = []
    for line_no, rec in enumerate(reader, start=1):
        if not any(cell.strip() for cell in rec):
            continue
        try:
            tmin = float(rec[idx["tmin"]])
            tmax = float(rec[idx["tmax"]])
        except (ValueError, IndexError) as exc:
            raise LabelError(f"row {line_no}: cannot parse times from {rec!r}") from exc
        rows.append(IntervalRow(tmin, rec[idx["tier"]], rec[idx["text"]], tmax))
    return IntervalTable(rows)


def read_label_csv(path) -> IntervalTable:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        return parse_label_csv(fh)


def format_label_csv(table: IntervalTable | Iterable[IntervalRow]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in table:
        writer.writerow([_fmt_time(r.tmin), r.tier, r.text, _fmt_time(r.tmax)])
    return out.getvalue()


def _fmt_time(t: float) -> str:
    s = f"{t:.6f}".rstrip("0").rstrip(".")
    return s or "0"


def _ascii(s: str) -> str:
    return s.encode("ascii", "ignore").decode("ascii")


def canonical_tier(raw: str, aliases: Mapping[str, str] = DEFAULT_TIER_ALIASES) -> str:
    key = _ascii(raw).strip().upper()
    try:
        return aliases[key]
    except KeyError:
        raise LabelError(f"tier {raw!r} does not map to CH1/CH2") from None


def clean_intervals(
    table: IntervalTable, aliases: Mapping[str, str] = DEFAULT_TIER_ALIASES
) -> IntervalTable:
    """Repair the usual defects of hand-made label files.

    Tier and text lose non-ASCII code points and surrounding blanks and are
    upper-cased; tiers go through ``aliases``. Rows with ``tmin >= tmax``
    are dropped. Within a tier, rows are sorted by start time and a row
    starting before its predecessor ends is clamped to start at that end
    (dropped if nothing remains).

    Each tier's rows keep the table positions that tier occupied, so a
    table that is already clean comes back unchanged. ``dropped`` on the
    result counts the rows removed.
    """
    cleaned: list[IntervalRow | None] = []
    dropped = 0
    for r in table.rows:
        row = IntervalRow(r.tmin, canonical_tier(r.tier, aliases),
                          _ascii(r.text).strip().upper(), r.tmax)
        if not row.tmin < row.tmax:
            dropped += 1
            cleaned.append(None)
            continue
        cleaned.append(row)

    slots: dict[str, list[int]] = {}
    for i, row in enumerate(cleaned):
        if row is not None:
            slots.setdefault(row.tier, []).append(i)

    for tier, positions in slots.items():
        ordered = sorted((cleaned[i] for i in positions), key=lambda r: (r.tmin, r.tmax))
        prev_end = -math.inf
        repaired: list[IntervalRow | None] = []
        for row in ordered:
            if row.tmin < prev_end:
                row = replace(row, tmin=prev_end)
                if row.tmin >= row.tmax:
                    repaired.append(None)
                    dropped += 1
                    continue
            repaired.append(row)
            prev_end = row.tmax
        for i, row in zip(positions, repaired):
            cleaned[i] = row

    if dropped:
        logger.warning("clean_intervals dropped %d degenerate or overlapped row(s)", dropped)
    return IntervalTable([r for r in cleaned if r is not None], dropped=table.dropped + dropped)


def time_to_index(t: float, segment_duration: float) -> int:
    """Segment index holding time ``t``, by truncation."""
    return math.floor((t + _FLOOR_GUARD) / segment_duration)


def intervals_to_labels(
    table: IntervalTable, tier: str, n_segments: int, segment_duration: float = 0.1
) -> LabelVector:
    """Binary labels for one channel: 1 on ``[floor(tmin/d), floor(tmax/d))`` of each S row."""
    if segment_duration <= 0:
        raise ValueError("segment_duration must be positive")
    labels = np.zeros(n_segments, dtype=np.int64)
    for r in table.rows:
        if r.tier != tier or r.text != "S":
            continue
        lo = max(time_to_index(r.tmin, segment_duration), 0)
        hi = min(time_to_index(r.tmax, segment_duration), n_segments)
        if lo < hi:
            labels[lo:hi] = 1
    return LabelVector(labels, BINARY, segment_duration)


def merge_four_class(label_ch1: LabelVector, label_ch2: LabelVector) -> LabelVector:
    """Combine two binary channel labels: none 0, ch1 1, ch2 2, both 3."""
    if label_ch1.scheme != BINARY or label_ch2.scheme != BINARY:
        raise LabelError("merge_four_class needs two binary label vectors")
    if len(label_ch1) != len(label_ch2):
        raise LabelError(f"label lengths differ: {len(label_ch1)} vs {len(label_ch2)}")
    return LabelVector(label_ch1.classes + 2 * label_ch2.classes, FOUR_CLASS,
                       label_ch1.segment_duration)


def labels_to_intervals(labels: LabelVector, tier: str) -> list[IntervalRow]:
    """Inverse of :func:`intervals_to_labels` for a binary vector: alternating N/S runs."""
    d = labels.segment_duration
    rows = []
    c = labels.classes
    start = 0
    for i in range(1, len(c) + 1):
        if i == len(c) or c[i] != c[start]:
            rows.append(IntervalRow(round(start * d, 6), tier, "S" if c[start] else "N",
                                    round(i * d, 6)))
            start = i
    return rows
