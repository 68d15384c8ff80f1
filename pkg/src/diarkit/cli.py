"""``diarkit`` command line: synth, normalize, prepare, train, evaluate, predict, plot.

Exit status is 0 on success, 1 on a usage error, 2 when input data is bad.
Numeric defaults may come from ``--config FILE`` (``key=value`` lines, keys
spelled like the long flags); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import trainer
from .audio_io import AudioError, normalize_to_dbfs, read_wav, write_wav
from .features import (CacheError, FeatureCache, cache_read, cache_write, log_power,
                       power_spectrogram)
from .labelset import (IntervalTable, LabelError, LabelVector, clean_intervals,
                       format_label_csv, intervals_to_labels, labels_to_intervals,
                       read_label_csv)
from .nn import CheckpointError, SpecError, load_checkpoint, save_checkpoint
from .pipeline import PrepConfig, file_id, find_pairs, label_scheme, prepare_clip
from .plot import render_comparison
from .segmenter import AlignedDataset
from .synth import CorpusSpec, synth_corpus

logger = logging.getLogger("diarkit")

DEFAULTS = {
    "seed": 0,
    "segment-sec": 0.1,
    "downsample": 4,
    "target-dbfs": -20.0,
    "model": "slp",
    "classes": 2,
    "epochs": 10,
    "batch": 128,
    "lr": 0.001,
    "dropout": 0.0,
    "eval-every": 50,
    "steps": 22,
    "n-files": 10,
    "duration": 60.0,
    "speech-fraction": 0.4,
    "noise-dbfs": -50.0,
}
CASTS = {"seed": int, "segment-sec": float, "downsample": int, "target-dbfs": float,
         "model": str, "classes": int, "epochs": int, "batch": int, "lr": float,
         "dropout": float, "eval-every": int, "steps": int, "n-files": int,
         "duration": float, "speech-fraction": float, "noise-dbfs": float, "hidden": str}

DATASET_FILE = "dataset.npz"
PREP_META = "prep.txt"
FEATURES_FILE = "features.dkfc"
CHECKPOINT_FILE = "model.dknn"
RUN_META = "run.txt"
SPLIT_FILE = "split.txt"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- key=value files -------------------------------------------------------

def read_kv(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def write_kv(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")


def resolve(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            raw = read_kv(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        for key, value in raw.items():
            if key not in CASTS:
                raise UsageError(f"unknown config key {key!r}")
            try:
                settings[key] = CASTS[key](value)
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
    for key in CASTS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            settings[key] = value
    return settings


# -- commands --------------------------------------------------------------

def cmd_synth(args, cfg):
    spec = CorpusSpec(cfg["n-files"], cfg["duration"], cfg["speech-fraction"],
                      cfg["noise-dbfs"], cfg["seed"])
    pairs = synth_corpus(spec, _out_dir(args))
    for wav, csv in pairs:
        print(f"{wav}\t{csv}")


def cmd_normalize(args, cfg):
    out = _out_dir(args)
    wavs = []
    for item in args.inputs:
        p = Path(item)
        wavs += sorted(p.glob("*.wav")) if p.is_dir() else [p]
    if not wavs:
        raise DataError("no WAV files to normalize")
    for wav in wavs:
        clip = normalize_to_dbfs(read_wav(wav), cfg["target-dbfs"])
        write_wav(clip, out / wav.name)
        csv = wav.with_suffix(".csv")
        if csv.exists() and csv.resolve() != (out / csv.name).resolve():
            shutil.copyfile(csv, out / csv.name)
        print(out / wav.name)


def _prep_config(cfg, normalize=True) -> PrepConfig:
    return PrepConfig(cfg["segment-sec"], cfg["downsample"],
                      cfg["target-dbfs"] if normalize else None, cfg["classes"])


def cmd_prepare(args, cfg):
    out = _out_dir(args)
    pairs = find_pairs(args.data_dir)
    if not pairs:
        raise DataError(f"no wav/csv pairs in {args.data_dir}")
    config = _prep_config(cfg, not args.skip_normalize)
    arrays, rates = {}, set()
    want_features = args.spectrogram or cfg["model"] == "cnn"
    cache = FeatureCache()
    for wav, csv in pairs:
        clip = read_wav(wav)
        rates.add(clip.sample_rate)
        for ds in prepare_clip(clip, clean_intervals(read_label_csv(csv)), config, file_id(wav)):
            arrays[f"x/{ds.source_id}"] = ds.segments
            arrays[f"y/{ds.source_id}"] = ds.labels.classes
            if want_features:
                rate = clip.sample_rate / config.downsample
                cache.add(ds.source_id, power_spectrogram(ds.segments, rate, cache.params))
        print(f"{wav.name}\t{len(ds)} segments")
    if len(rates) != 1:
        raise DataError(f"mixed sample rates {sorted(rates)}")
    np.savez(out / DATASET_FILE, **arrays)
    write_kv(out / PREP_META, {"segment-sec": config.segment_sec,
                               "downsample": config.downsample,
                               "sample-rate": rates.pop(),
                               "classes": config.classes,
                               "target-dbfs": config.target_dbfs})
    if want_features:
        cache_write(cache, out / FEATURES_FILE)


def load_prepared(prep_dir, use_features: bool = False, log: bool = False):
    """Per-channel datasets from a ``prepare`` output directory."""
    prep_dir = Path(prep_dir)
    try:
        meta = read_kv(prep_dir / PREP_META)
        data = np.load(prep_dir / DATASET_FILE)
    except OSError as exc:
        raise DataError(f"{prep_dir} is not a prepared dataset: {exc}") from exc
    classes = int(meta["classes"])
    seg = float(meta["segment-sec"])
    cache = None
    if use_features:
        path = prep_dir / FEATURES_FILE
        if path.exists():
            cache = cache_read(path)
        rate = float(meta["sample-rate"]) / int(meta["downsample"])
    out = []
    for key in sorted(k for k in data.files if k.startswith("x/")):
        sid = key[2:]
        x = data[key]
        if use_features:
            x = cache.entries[sid].astype(np.float64) if cache else power_spectrogram(x, rate)
            if log:
                x = log_power(x)
        labels = LabelVector(data[f"y/{sid}"], label_scheme(classes), seg)
        out.append(AlignedDataset(x, labels, sid))
    return out, classes


def _file_of(source_id: str) -> str:
    return source_id.rsplit(":", 1)[0]


def build_spec(cfg, classes: int, hidden: str | None):
    n_out = 1 if classes == 2 else 4
    kind = cfg["model"]
    sizes = tuple(int(h) for h in hidden.split(",")) if hidden else None
    if kind == "slp":
        return trainer.slp(sizes[0] if sizes else 100, n_outputs=n_out)
    if kind == "mlp":
        return trainer.mlp(sizes or (100, 50), n_outputs=n_out)
    if kind == "rnn":
        layers, cells = (len(sizes), sizes[0]) if sizes else (3, 150)
        if sizes and len(set(sizes)) != 1:
            raise UsageError("rnn layers share one width; use --hidden 150,150,150")
        return trainer.rnn(layers, cells, cfg["steps"], n_outputs=n_out)
    if kind == "cnn":
        return trainer.cnn(head=sizes or (64,), n_outputs=n_out)
    raise UsageError(f"unknown model {kind!r}")


def cmd_train(args, cfg):
    out = _out_dir(args)
    is_cnn = cfg["model"] == "cnn"
    datasets, classes = load_prepared(args.prep_dir, is_cnn, args.log_power)
    if args.classes is not None and args.classes != classes:
        raise UsageError(f"dataset was prepared with {classes} classes")
    spec = build_spec(cfg, classes, cfg.get("hidden"))
    files = sorted({_file_of(d.source_id) for d in datasets})
    plan = trainer.split_files(files, cfg["seed"])
    by_split = {s: [d for d in datasets if _file_of(d.source_id) in plan[s]]
                for s in trainer.SPLITS}
    hp = trainer.Hyperparams(cfg["batch"], cfg["epochs"], cfg["lr"], cfg["dropout"],
                             cfg["eval-every"], cfg["seed"])
    params, report = trainer.train(spec, by_split, hp)
    save_checkpoint(spec, params, out / CHECKPOINT_FILE)
    report.write(out)
    write_kv(out / SPLIT_FILE, {s: ",".join(plan[s]) for s in trainer.SPLITS})
    write_kv(out / RUN_META, {"model": cfg["model"], "classes": classes,
                              "log-power": int(args.log_power), "seed": cfg["seed"]})
    if not report.test_accuracy:
        logger.warning("split left no test files; nothing evaluated")
        return
    for k, v in report.test_accuracy.items():
        print(f"{k}\t{v:.6f}")
    print(f"MEAN\t{report.mean_test_accuracy:.6f}")


def _run_meta(checkpoint) -> dict:
    path = Path(checkpoint).parent / RUN_META
    return read_kv(path) if path.exists() else {}


def cmd_evaluate(args, cfg):
    spec, params = load_checkpoint(args.checkpoint)
    run = _run_meta(args.checkpoint)
    log = args.log_power or run.get("log-power") == "1"
    datasets, _ = load_prepared(args.prep_dir, spec.kind == "cnn", log)
    split_path = Path(args.checkpoint).parent / SPLIT_FILE
    if args.split != "all":
        if not split_path.exists():
            raise DataError(f"no {SPLIT_FILE} beside the checkpoint; use --split all")
        keep = set(filter(None, read_kv(split_path).get(args.split, "").split(",")))
        datasets = [d for d in datasets if _file_of(d.source_id) in keep]
    if not datasets:
        raise DataError(f"no files in split {args.split!r}")
    scores = trainer.evaluate_files(spec, params, datasets)
    for k, v in scores.items():
        print(f"{k}\t{v:.6f}")
    print(f"MEAN\t{trainer.average_accuracy(list(scores.values())):.6f}")


def cmd_predict(args, cfg):
    """Four-class models are read on channel 1 and split back into per-tier intervals."""
    spec, params = load_checkpoint(args.checkpoint)
    log = args.log_power or _run_meta(args.checkpoint).get("log-power") == "1"
    out = _out_dir(args)
    config = PrepConfig(cfg["segment-sec"], cfg["downsample"], cfg["target-dbfs"], 2)
    clip = read_wav(args.wav)
    datasets = prepare_clip(clip, IntervalTable(), config, file_id(args.wav))
    if spec.n_outputs == 4:
        datasets = datasets[:1]
    rows = []
    for ds in datasets:
        x = ds.segments
        if spec.kind == "cnn":
            x = power_spectrogram(x, clip.sample_rate / config.downsample)
            if log:
                x = log_power(x)
        pred = trainer.predict_segments(spec, params, x, config.segment_sec)
        if spec.n_outputs == 4:
            for bit, tier in enumerate(("CH1", "CH2")):
                speech = LabelVector((pred.classes >> bit) & 1, segment_duration=config.segment_sec)
                rows += labels_to_intervals(speech, tier)
        else:
            rows += labels_to_intervals(pred, ds.source_id.rsplit(":", 1)[1])
    rows.sort(key=lambda r: (r.tmin, r.tier))
    path = out / f"{file_id(args.wav)}.pred.csv"
    path.write_text(format_label_csv(rows), encoding="utf-8")
    print(path)


def cmd_plot(args, cfg):
    seg = cfg["segment-sec"]
    truth = clean_intervals(read_label_csv(args.truth))
    pred = clean_intervals(read_label_csv(args.pred))
    end = max((r.tmax for r in (*truth.rows, *pred.rows)), default=0.0)
    n = int(np.floor(end / seg + 1e-9))
    t = intervals_to_labels(truth, args.channel, n, seg).classes
    p = intervals_to_labels(pred, args.channel, n, seg).classes
    lo = args.from_ or 0
    hi = n if args.to is None else min(args.to, n)
    if not 0 <= lo <= hi:
        raise UsageError(f"bad segment range {lo}..{hi}")
    render_comparison(t[lo:hi], p[lo:hi], args.out, start=lo,
                      title=f"{args.channel}: label vs prediction")
    print(args.out)


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--segment-sec", type=float)
    common.add_argument("--downsample", type=int)
    common.add_argument("--target-dbfs", type=float)
    common.add_argument("--model", choices=["slp", "mlp", "rnn", "cnn"])
    common.add_argument("--classes", type=int, choices=[2, 4])
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch", type=int)
    common.add_argument("--out", metavar="DIR")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="diarkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic labeled corpus")
    p.add_argument("--n-files", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--speech-fraction", type=float)
    p.add_argument("--noise-dbfs", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("normalize", parents=[common], help="RMS-normalize WAV files")
    p.add_argument("inputs", nargs="+", help="WAV files or directories")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("prepare", parents=[common], help="segment, label, and cache features")
    p.add_argument("data_dir")
    p.add_argument("--spectrogram", action="store_true", help="also write the feature cache")
    p.add_argument("--skip-normalize", action="store_true")
    p.set_defaults(func=cmd_prepare)

    for name, func, help_ in (("train", cmd_train, "train a classifier"),
                              ("evaluate", cmd_evaluate, "per-file accuracy of a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("prep_dir")
        p.add_argument("--log-power", action="store_true", help="log10 spectrogram inputs (cnn)")
        if name == "train":
            p.add_argument("--hidden", help="comma-separated hidden widths")
            p.add_argument("--lr", type=float)
            p.add_argument("--dropout", type=float)
            p.add_argument("--eval-every", type=int)
            p.add_argument("--steps", type=int)
        else:
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--split", choices=["train", "validation", "test", "all"],
                           default="test")
        p.set_defaults(func=func)

    p = sub.add_parser("predict", parents=[common], help="write predicted intervals for a WAV")
    p.add_argument("wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log-power", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", parents=[common], help="SVG of label vs prediction ticks")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--channel", default="CH1", choices=["CH1", "CH2"])
    p.add_argument("--from", dest="from_", type=int)
    p.add_argument("--to", type=int)
    p.set_defaults(func=cmd_plot)
    return parser


DATA_ERRORS = (DataError, AudioError, LabelError, CacheError, CheckpointError, SpecError,
               FileNotFoundError, KeyError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        if args.command == "plot" and not args.out:
            raise UsageError("--out is required")
        args.func(args, cfg)
    except UsageError as exc:
        print(f"diarkit: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"diarkit: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
