import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from diarkit.audio_io import read_wav
from diarkit.cli import main, read_kv
from diarkit.labelset import (BINARY, LabelVector, clean_intervals, intervals_to_labels,
                              read_label_csv)
from diarkit.pipeline import PrepConfig, prepare_pair
from diarkit.plot import comparison_svg, render_comparison
from diarkit.synth import CorpusSpec, synth_corpus, synth_file

SVG = "{http://www.w3.org/2000/svg}"


def _speech_seconds(table, tier):
    return sum(r.tmax - r.tmin for r in table.tier(tier) if r.text == "S")


class TestSynth:
    def test_byte_identical(self, tmp_path):
        spec = CorpusSpec(n_files=2, duration=3.0, seed=11)
        a = synth_corpus(spec, tmp_path / "a")
        b = synth_corpus(spec, tmp_path / "b")
        for (wa, ca), (wb, cb) in zip(a, b):
            assert wa.read_bytes() == wb.read_bytes()
            assert ca.read_bytes() == cb.read_bytes()

    def test_seed_matters(self):
        a, _ = synth_file(CorpusSpec(n_files=1, duration=2.0, seed=1), 0)
        b, _ = synth_file(CorpusSpec(n_files=1, duration=2.0, seed=2), 0)
        assert not np.array_equal(a.channels[0], b.channels[0])

    def test_speech_duration_window(self, tmp_path):
        spec = CorpusSpec(n_files=3, duration=60.0, speech_fraction=0.4, seed=5)
        for _, csv in synth_corpus(spec, tmp_path):
            table = read_label_csv(csv)
            for tier in ("CH1", "CH2"):
                assert 21.0 <= _speech_seconds(table, tier) <= 27.0

    def test_cleaning_is_identity(self, small_corpus):
        for _, csv in small_corpus:
            table = read_label_csv(csv)
            cleaned = clean_intervals(table)
            assert cleaned.rows == table.rows and cleaned.dropped == 0

    def test_pipeline_alignment(self, small_corpus):
        for wav, csv in small_corpus:
            clip = read_wav(wav)
            datasets = prepare_pair(wav, csv, PrepConfig())
            assert len(datasets) == 2
            for ds in datasets:
                assert ds.segments.shape == (100, 1102)
                assert len(ds.labels) == 100
            assert clip.duration == 10.0

    def test_tiles_duration(self):
        _, rows = synth_file(CorpusSpec(duration=7.3), 0)
        for tier in ("CH1", "CH2"):
            mine = [r for r in rows if r.tier == tier]
            assert mine[0].tmin == 0.0 and mine[-1].tmax == 7.3
            assert all(a.tmax == b.tmin for a, b in zip(mine, mine[1:]))

    @pytest.mark.parametrize("duration", [1.0, 2.0, 4.5])
    @pytest.mark.parametrize("fraction", [0.05, 0.4, 0.95])
    def test_short_files_hit_fraction(self, duration, fraction):
        for seed in range(10):
            _, rows = synth_file(CorpusSpec(duration=duration, speech_fraction=fraction,
                                            seed=seed), 0)
            for tier in ("CH1", "CH2"):
                talk = sum(r.tmax - r.tmin for r in rows if r.tier == tier and r.text == "S")
                assert abs(talk / duration - fraction) <= 0.025 + 1e-9

    @pytest.mark.parametrize("kw", [dict(speech_fraction=0.0), dict(speech_fraction=1.0),
                                    dict(duration=0.5), dict(n_files=0)])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            CorpusSpec(**kw)


class TestPlot:
    def _ticks(self, svg_text):
        root = ET.fromstring(svg_text)
        counts = {}
        for g in root.iter(f"{SVG}g"):
            if g.get("class") in ("truth", "prediction"):
                counts[g.get("class")] = sum(1 for e in g.iter(f"{SVG}line")
                                             if e.get("class") == "tick")
        return counts

    def test_empty(self, tmp_path):
        empty = LabelVector(np.zeros(0, int), BINARY, 0.1)
        render_comparison(empty, empty, tmp_path / "e.svg")
        assert self._ticks((tmp_path / "e.svg").read_text()) == {"truth": 0, "prediction": 0}

    def test_tick_counts(self):
        svg = comparison_svg(LabelVector([1, 0, 1], BINARY, 0.1),
                             LabelVector([1, 1, 0], BINARY, 0.1))
        assert self._ticks(svg) == {"truth": 2, "prediction": 2}

    def test_well_formed_random(self, rng):
        for n in (1, 17, 400, 2000):
            t, p = rng.integers(0, 2, n), rng.integers(0, 2, n)
            counts = self._ticks(comparison_svg(t, p, start=123, title="a <b> & c"))
            assert counts == {"truth": int(t.sum()), "prediction": int(p.sum())}

    def test_errors(self, tmp_path):
        with pytest.raises(ValueError):
            comparison_svg([1, 0], [1])
        with pytest.raises(OSError):
            render_comparison([1], [1], tmp_path / "missing" / "dir" / "x.svg")


@pytest.fixture(scope="module")
def trained(small_corpus, tmp_path_factory):
    """normalize -> prepare -> train on the shared 8-file corpus."""
    root = tmp_path_factory.mktemp("run")
    data_dir = small_corpus[0][0].parent
    assert main(["normalize", str(data_dir), "--out", str(root / "norm")]) == 0
    assert main(["prepare", str(root / "norm"), "--out", str(root / "prep")]) == 0
    assert main(["train", str(root / "prep"), "--model", "slp", "--epochs", "3",
                 "--batch", "64", "--seed", "1", "--out", str(root / "model")]) == 0
    return root


class TestCommands:
    def test_artifacts(self, trained, capsys):
        assert (trained / "norm" / "file_000.csv").exists()
        meta = read_kv(trained / "prep" / "prep.txt")
        assert meta["sample-rate"] == "44100" and meta["downsample"] == "4"
        data = np.load(trained / "prep" / "dataset.npz")
        assert data["x/file_000:CH1"].shape == (100, 1102)
        for name in ("model.dknn", "train.log", "summary.txt", "split.txt", "run.txt"):
            assert (trained / "model" / name).exists()
        split = read_kv(trained / "model" / "split.txt")
        assert [len(split[k].split(",")) for k in ("train", "validation", "test")] == [6, 1, 1]

    def test_normalized_level(self, trained):
        from diarkit.audio_io import measure_dbfs
        clip = read_wav(trained / "norm" / "file_003.wav")
        for ch in clip.channels:
            assert abs(measure_dbfs(ch) + 20.0) < 0.01  # after int16 quantization

    def test_evaluate_format(self, trained, capsys):
        capsys.readouterr()
        args = ["evaluate", str(trained / "prep"), "--checkpoint",
                str(trained / "model" / "model.dknn")]
        assert main(args) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        *items, mean = [line.split("\t") for line in lines]
        assert all(len(p) == 2 and p[0].startswith("file_") for p in items)
        assert mean[0] == "MEAN"
        assert float(mean[1]) == pytest.approx(np.mean([float(v) for _, v in items]), abs=1e-6)
        assert float(mean[1]) > 0.8
        assert main(args) == 0
        assert capsys.readouterr().out.strip().splitlines() == lines

    def test_evaluate_all(self, trained, capsys):
        capsys.readouterr()
        assert main(["evaluate", str(trained / "prep"), "--split", "all", "--checkpoint",
                     str(trained / "model" / "model.dknn")]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 17

    def test_train_deterministic(self, trained, tmp_path):
        assert main(["train", str(trained / "prep"), "--model", "slp", "--epochs", "3",
                     "--batch", "64", "--seed", "1", "--out", str(tmp_path)]) == 0
        for name in ("model.dknn", "train.log", "split.txt"):
            assert (tmp_path / name).read_bytes() == (trained / "model" / name).read_bytes()

    def test_predict_and_plot(self, trained, small_corpus, tmp_path):
        wav, csv = small_corpus[0]
        assert main(["predict", str(wav), "--checkpoint", str(trained / "model" / "model.dknn"),
                     "--out", str(tmp_path)]) == 0
        pred_csv = tmp_path / "file_000.pred.csv"
        pred = clean_intervals(read_label_csv(pred_csv))
        assert {r.tier for r in pred.rows} == {"CH1", "CH2"}
        truth = intervals_to_labels(clean_intervals(read_label_csv(csv)), "CH1", 100, 0.1)
        guess = intervals_to_labels(pred, "CH1", 100, 0.1)
        assert np.mean(truth.classes == guess.classes) > 0.7
        out = tmp_path / "cmp.svg"
        assert main(["plot", "--truth", str(csv), "--pred", str(pred_csv), "--from", "10",
                     "--to", "60", "--out", str(out)]) == 0
        ET.parse(out)

    def test_config_precedence(self, small_corpus, tmp_path):
        data_dir = str(small_corpus[0][0].parent)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\ndownsample = 2\nsegment_sec=0.2\n")
        assert main(["prepare", data_dir, "--config", str(cfg), "--out",
                     str(tmp_path / "a")]) == 0
        assert np.load(tmp_path / "a" / "dataset.npz")["x/file_000:CH1"].shape == (50, 4410)
        assert main(["prepare", data_dir, "--config", str(cfg), "--downsample", "4",
                     "--out", str(tmp_path / "b")]) == 0
        assert np.load(tmp_path / "b" / "dataset.npz")["x/file_000:CH1"].shape == (50, 2205)

    def test_four_class_prepare(self, small_corpus, tmp_path):
        data_dir = str(small_corpus[0][0].parent)
        assert main(["prepare", data_dir, "--classes", "4", "--out", str(tmp_path)]) == 0
        data = np.load(tmp_path / "dataset.npz")
        np.testing.assert_array_equal(data["y/file_000:CH1"], data["y/file_000:CH2"])
        assert data["y/file_000:CH1"].max() <= 3

    def test_cnn_cache(self, small_corpus, tmp_path):
        from diarkit.features import cache_read
        data_dir = str(small_corpus[0][0].parent)
        assert main(["prepare", data_dir, "--spectrogram", "--out", str(tmp_path)]) == 0
        cache = cache_read(tmp_path / "features.dkfc")
        assert cache.entries["file_000:CH2"].shape == (100, 129, 4)
        assert main(["train", str(tmp_path), "--model", "cnn", "--epochs", "1", "--log-power",
                     "--out", str(tmp_path / "m")]) == 0


class TestExitCodes:
    def test_usage_errors(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            main(["train", str(tmp_path), "--model", "transformer"])
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            main(["bogus"])
        assert exc.value.code == 1
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("no_such_key=1\n")
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert main(["synth", "--n-files", "1"]) == 1

    def test_data_errors(self, tmp_path):
        assert main(["prepare", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
        bad = tmp_path / "x.wav"
        bad.write_bytes(b"RIFF\x00\x00\x00\x00WAVE")
        assert main(["normalize", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert main(["evaluate", str(tmp_path), "--checkpoint", str(tmp_path / "nope.dknn")]) == 2
        assert main(["synth", "--speech-fraction", "1.5", "--out", str(tmp_path)]) == 2

    def test_synth_command(self, tmp_path):
        args = ["synth", "--n-files", "2", "--duration", "2", "--seed", "3"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("file_000.wav", "file_001.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_smoke_six_files(tmp_path):
    """normalize -> prepare -> train(slp-100) -> evaluate on 6 x 30 s."""
    start = time.perf_counter()
    assert main(["synth", "--n-files", "6", "--duration", "30", "--seed", "2",
                 "--out", str(tmp_path / "raw")]) == 0
    assert main(["normalize", str(tmp_path / "raw"), "--out", str(tmp_path / "norm")]) == 0
    assert main(["prepare", str(tmp_path / "norm"), "--out", str(tmp_path / "prep")]) == 0
    assert main(["train", str(tmp_path / "prep"), "--model", "slp", "--epochs", "2",
                 "--out", str(tmp_path / "model")]) == 0
    # six files leave no held-out split under floor rounding, so score them all
    assert main(["evaluate", str(tmp_path / "prep"), "--split", "all", "--checkpoint",
                 str(tmp_path / "model" / "model.dknn")]) == 0
    assert time.perf_counter() - start < 300
