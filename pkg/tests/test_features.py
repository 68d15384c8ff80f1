import struct

import numpy as np
import pytest
from scipy import signal

from diarkit.features import (CacheError, FeatureCache, StftParams, cache_bytes, cache_read,
                              cache_write, power_spectrogram, spectrogram, window_values)

FS = 11025.0
PARAMS = StftParams()


def direct_dft(frame):
    n = len(frame)
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    return (frame[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


class TestSpectrogram:
    def test_shape_1102(self, rng):
        s = spectrogram(rng.normal(size=1102), FS)
        assert s.magnitudes.shape == (129, 4)
        assert s.bin_hz == pytest.approx(FS / 256)

    def test_zero_segment(self):
        assert not spectrogram(np.zeros(1102)).magnitudes.any()

    def test_non_negative(self, rng):
        assert (spectrogram(rng.normal(size=1102)).magnitudes >= 0).all()

    def test_too_short(self):
        with pytest.raises(ValueError, match="shorter"):
            spectrogram(np.zeros(255))

    @pytest.mark.parametrize("k", [1, 10, 37, 100, 127])
    def test_bin_centre_sine(self, k):
        t = np.arange(1102)
        x = np.sin(2 * np.pi * k * (FS / 256) * t / FS)
        mag = spectrogram(x, FS).magnitudes
        assert (mag.argmax(axis=0) == k).all()
        frame = x[:256] * window_values("tukey", 256)
        assert np.abs(direct_dft(frame))[:129].argmax() == k

    def test_first_frame_matches_direct_dft(self, rng):
        x = rng.normal(size=1102)
        w = window_values("tukey", 256)
        dft = np.abs(direct_dft(x[:256] * w)[:129]) ** 2 / (FS * np.sum(w ** 2))
        dft[1:-1] *= 2
        np.testing.assert_allclose(power_spectrogram(x, FS)[:, 0], dft, rtol=1e-9)

    def test_parseval(self, rng):
        x = rng.normal(size=256)
        w = window_values("tukey", 256)
        direct = sum(v * v for v in x * w)
        psd = power_spectrogram(x, FS)[:, 0]
        # undo one-sided folding and density scaling to get total frame power
        total = psd.sum() * FS * np.sum(w ** 2) / 256
        assert abs(total - direct) / direct < 0.01
        assert total == pytest.approx(direct, rel=1e-9)

    def test_frame_count_law(self):
        for n in range(256, 2000, 7):
            assert power_spectrogram(np.zeros(n)).shape[1] == 1 + (n - 256) // 224
        assert 1 + (1102 - 256) // 224 == 4

    def test_power_scales_quadratically(self, rng):
        x = rng.normal(size=1102)
        for g in (0.1, 2.0, 37.5):
            np.testing.assert_allclose(power_spectrogram(g * x), g * g * power_spectrogram(x),
                                       rtol=1e-9)

    def test_stack_matches_single(self, rng):
        x = rng.normal(size=(5, 1102))
        stacked = power_spectrogram(x, FS)
        assert stacked.shape == (5, 129, 4)
        for i in range(5):
            np.testing.assert_array_equal(stacked[i], power_spectrogram(x[i], FS))

    def test_agrees_with_scipy_defaults(self, rng):
        x = rng.normal(size=1102)
        f, t, sxx = signal.spectrogram(x, FS, detrend=False)
        assert sxx.shape == (129, 4)
        np.testing.assert_allclose(power_spectrogram(x, FS), sxx, rtol=1e-6, atol=1e-12)

    def test_window_matches_scipy(self):
        np.testing.assert_allclose(window_values("tukey", 256),
                                   signal.get_window(("tukey", 0.25), 256), atol=1e-12)
        np.testing.assert_allclose(window_values("hann", 256),
                                   signal.get_window("hann", 256), atol=1e-12)


def random_cache(rng, n=3):
    c = FeatureCache()
    for i in range(n):
        c.add(f"file_{i}:CH{i % 2 + 1}", rng.random((i + 2, 129, 4)).astype(np.float32))
    return c


class TestCache:
    def test_empty_round_trip(self, tmp_path):
        cache_write(FeatureCache(), tmp_path / "c")
        assert cache_read(tmp_path / "c") == FeatureCache()

    def test_single_zero_entry(self, tmp_path):
        c = FeatureCache()
        c.add("a", np.zeros((1, 129, 4)))
        cache_write(c, tmp_path / "c")
        assert cache_read(tmp_path / "c") == c

    def test_random_bit_identical(self, tmp_path, rng):
        c = random_cache(rng)
        cache_write(c, tmp_path / "c")
        raw = (tmp_path / "c").read_bytes()
        back = cache_read(tmp_path / "c")
        assert cache_bytes(back) == raw
        for k, v in c.entries.items():
            assert back.entries[k].tobytes() == v.tobytes()

    def test_layout(self, rng):
        c = FeatureCache()
        c.add("ab", np.ones((1, 2, 3)))
        raw = cache_bytes(c)
        assert raw[:4] == b"DKFC"
        assert struct.unpack_from("<IIIIII", raw, 4) == (1, 256, 224, 256, 1, 1)
        assert struct.unpack_from("<H2sIII", raw, 28) == (2, b"ab", 1, 2, 3)
        assert np.frombuffer(raw[44:], "<f4").tolist() == [1.0] * 6

    def test_bad_magic(self):
        with pytest.raises(CacheError, match="magic"):
            from diarkit.features import cache_from_bytes
            cache_from_bytes(b"XXXX" + b"\x00" * 40)

    def test_bad_version(self, rng):
        from diarkit.features import cache_from_bytes
        raw = bytearray(cache_bytes(random_cache(rng, 1)))
        raw[4] = 9
        with pytest.raises(CacheError, match="version"):
            cache_from_bytes(bytes(raw))

    def test_truncated(self, rng):
        from diarkit.features import cache_from_bytes
        raw = cache_bytes(random_cache(rng, 2))
        for cut in (6, 30, len(raw) - 1):
            with pytest.raises(CacheError, match="truncated"):
                cache_from_bytes(raw[:cut])

    def test_merge(self, rng):
        a, b = random_cache(rng, 1), random_cache(rng, 2)
        a.merge(b)
        assert set(a.entries) == set(b.entries)
        with pytest.raises(CacheError, match="mismatch"):
            a.merge(FeatureCache(StftParams(window_kind="hann")))

    def test_float_promotion(self, rng):
        c = random_cache(rng, 1)
        arr = next(iter(c.entries.values()))
        assert arr.dtype == np.float32
        assert arr.astype(np.float64).dtype == np.float64
