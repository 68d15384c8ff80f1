import numpy as np
import pytest

from diarkit.audio_io import downsample
from diarkit.labelset import LabelVector
from diarkit.segmenter import align, downsample_rows, segment_channel


class TestSegmentChannel:
    def test_ten_seconds(self):
        m = segment_channel(np.zeros(441000), 44100, 0.1)
        assert m.rows.shape == (100, 4410)

    def test_single_segment(self):
        assert segment_channel(np.zeros(4410), 44100, 0.1).rows.shape == (1, 4410)

    def test_partial_tail_dropped(self):
        x = np.arange(10000.0)
        m = segment_channel(x, 44100, 0.1)
        assert m.rows.shape == (2, 4410)
        assert m.rows[-1, -1] == 8819

    def test_too_short_segment(self):
        with pytest.raises(ValueError):
            segment_channel(np.zeros(10), 5, 0.1)

    def test_against_brute_force_slicer(self):
        w = 7
        for n in range(0, 10 * w + 1):
            x = np.arange(float(n))
            m = segment_channel(x, 70, 0.1)
            expected = []
            i = 0
            while i + w <= n:
                expected.append(list(x[i:i + w]))
                i += w
            assert m.rows.tolist() == expected
            assert m.n_segments == n // w

    def test_flatten_is_prefix(self, rng):
        x = rng.normal(size=12345)
        m = segment_channel(x, 44100, 0.1)
        assert np.array_equal(m.rows.reshape(-1), x[: m.rows.size])


class TestDownsampleRows:
    def test_width_1102(self):
        m = downsample_rows(segment_channel(np.zeros(441000), 44100, 0.1), 4)
        assert m.rows.shape == (100, 1102)
        assert m.effective_rate == 11025
        assert m.samples_per_segment == int(np.floor(m.effective_rate * 0.1))

    def test_rows_decimated_independently(self, rng):
        x = rng.normal(size=44100)
        m = downsample_rows(segment_channel(x, 44100, 0.1), 4)
        for i in range(m.n_segments):
            assert np.array_equal(m.rows[i], downsample(x[i * 4410:(i + 1) * 4410], 4))

    def test_whole_channel_order_differs_when_width_not_divisible(self, rng):
        x = rng.normal(size=44100)
        per_row = downsample_rows(segment_channel(x, 44100, 0.1), 4).rows
        whole = downsample(x, 4)
        assert not np.array_equal(per_row[1], whole[1102:2204])

    def test_whole_channel_order_agrees_when_divisible(self, rng):
        x = rng.normal(size=8000)
        per_row = downsample_rows(segment_channel(x, 8000, 0.1), 4).rows
        whole = segment_channel(downsample(x, 4), 2000, 0.1).rows
        assert np.array_equal(per_row, whole)


class TestAlign:
    @pytest.mark.parametrize("n_seg,n_lab,expected", [(100, 100, 100), (100, 98, 98),
                                                      (98, 100, 98)])
    def test_min_rule(self, n_seg, n_lab, expected):
        ds = align(np.zeros((n_seg, 3)), LabelVector(np.zeros(n_lab)), "f")
        assert len(ds.segments) == len(ds.labels) == expected

    def test_empty(self):
        with pytest.raises(ValueError):
            align(np.zeros((0, 3)), LabelVector(np.zeros(4)))
