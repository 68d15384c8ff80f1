"""Splits, the model catalog, mini-batch Adam training, and per-file scoring."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .labelset import BINARY, FOUR_CLASS, LabelVector
from .nn import AdamState, ModelSpec, SpecError, adam_step, forward, init_params, loss_and_grad
from .nn.model import predict_classes, rnn_steps
from .nn.spec import ConvLayer
from .segmenter import AlignedDataset

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
VAL_FRACTION = 0.15
TEST_FRACTION = 0.15
PREDICT_CHUNK = 1024


@dataclass
class SplitPlan:
    train: list[str]
    validation: list[str]
    test: list[str]
    seed: int

    def __getitem__(self, split: str) -> list[str]:
        return getattr(self, split)

    def split_of(self, item: str) -> str:
        for name in SPLITS:
            if item in self[name]:
                return name
        raise KeyError(item)


def split_files(file_ids: Sequence[str], seed: int = 0) -> SplitPlan:
    """Shuffle by seed; floor(15%) each to validation and test, the rest to train."""
    ids = list(file_ids)
    if len(ids) < 3:
        raise ValueError(f"need at least 3 files to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("file ids must be unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_val = math.floor(VAL_FRACTION * len(ids))
    n_test = math.floor(TEST_FRACTION * len(ids))
    return SplitPlan(shuffled[n_val + n_test:], shuffled[:n_val],
                     shuffled[n_val: n_val + n_test], seed)


def prepare_rnn_input(segment: Sequence[float], steps: int = 22) -> np.ndarray:
    """Reshape a segment to ``(steps, len // steps)``; trailing residue is dropped."""
    x = np.asarray(segment)
    if steps < 1 or steps > len(x):
        raise ValueError(f"cannot cut {len(x)} samples into {steps} steps")
    return rnn_steps(x[None, :], steps, len(x) // steps)[0]


# -- catalog -------------------------------------------------------------

SEGMENT_WIDTH = 1102
SPECTROGRAM_SHAPE = (129, 4)
RNN_STEPS = 22
DEFAULT_CNN = (ConvLayer(16, (3, 3), (2, 2)), ConvLayer(32, (3, 1), (1, 1)))


def slp(hidden: int = 100, width: int = SEGMENT_WIDTH, n_outputs: int = 1, **kw) -> ModelSpec:
    return ModelSpec("slp", input_width=width, layer_sizes=(hidden,), n_outputs=n_outputs, **kw)


def mlp(hidden=(100, 50), width: int = SEGMENT_WIDTH, n_outputs: int = 1, **kw) -> ModelSpec:
    return ModelSpec("mlp", input_width=width, layer_sizes=tuple(hidden), n_outputs=n_outputs,
                     **kw)


def rnn(layers: int = 3, cells: int = 150, steps: int = RNN_STEPS, width: int = SEGMENT_WIDTH,
        n_outputs: int = 1, **kw) -> ModelSpec:
    return ModelSpec("rnn", input_width=width, lstm_layers=layers, lstm_cells=cells,
                     steps=steps, step_width=width // steps, n_outputs=n_outputs, **kw)


def cnn(conv=DEFAULT_CNN, head=(64,), shape=SPECTROGRAM_SHAPE, n_outputs: int = 1,
        **kw) -> ModelSpec:
    """Conv 16@3x3 + pool 2x2, conv 32@3x1, dense 64.

    The second kernel is 3x1 because a 129x4 input is only one frame wide
    after the first conv and pool.
    """
    return ModelSpec("cnn", input_shape=shape, conv_spec=tuple(conv), layer_sizes=tuple(head),
                     n_outputs=n_outputs, **kw)


CATALOG = {
    "slp-100": lambda: slp(100),
    "slp-200": lambda: slp(200),
    "slp-500": lambda: slp(500),
    "mlp-100-50": lambda: mlp((100, 50)),
    "mlp-200-100": lambda: mlp((200, 100)),
    "mlp-300-50": lambda: mlp((300, 50)),
    "rnn-3x150": lambda: rnn(3, 150),
    "cnn": lambda: cnn(),
}


# -- training ------------------------------------------------------------

@dataclass
class Hyperparams:
    batch_size: int = 128
    epochs: int = 10
    learning_rate: float = 0.001
    dropout: float = 0.0
    eval_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    validation_trace: list[tuple[int, float]] = field(default_factory=list)
    test_accuracy: dict[str, float] = field(default_factory=dict)
    mean_test_accuracy: float = float("nan")
    baseline_accuracy: float = float("nan")
    wall_time: float = 0.0

    def log_lines(self) -> list[str]:
        lines = [f"epoch {i + 1} loss {loss:.6f} train_acc {acc:.4f}"
                 for i, (loss, acc) in enumerate(zip(self.train_loss, self.train_accuracy))]
        lines += [f"batch {b} val_acc {a:.4f}" for b, a in self.validation_trace]
        lines += [f"test {k} {v:.4f}" for k, v in self.test_accuracy.items()]
        return lines

    def summary(self) -> dict[str, str]:
        out = {
            "epochs": str(len(self.train_loss)),
            "final_train_loss": repr(self.train_loss[-1]) if self.train_loss else "nan",
            "final_validation_accuracy":
                repr(self.validation_trace[-1][1]) if self.validation_trace else "nan",
            "mean_test_accuracy": repr(self.mean_test_accuracy),
            "baseline_accuracy": repr(self.baseline_accuracy),
            "n_test_files": str(len(self.test_accuracy)),
            "wall_time_sec": f"{self.wall_time:.3f}",
        }
        return out

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        (out_dir / "train.log").write_text("\n".join(self.log_lines()) + "\n")
        (out_dir / "summary.txt").write_text(
            "".join(f"{k}={v}\n" for k, v in self.summary().items()))


def _check_data(spec: ModelSpec, datasets: Sequence[AlignedDataset]) -> None:
    scheme = BINARY if spec.n_outputs == 1 else FOUR_CLASS
    for d in datasets:
        if d.segments.shape[1:] != spec.input_dims:
            raise SpecError(f"{d.source_id}: inputs {d.segments.shape[1:]} do not fit "
                            f"{spec.kind} input {spec.input_dims}")
        if d.labels.scheme != scheme:
            raise SpecError(f"{d.source_id}: {d.labels.scheme} labels for a "
                            f"{spec.n_outputs}-output model")


def _with_dropout(spec: ModelSpec, rate: float) -> ModelSpec:
    return spec if rate == spec.dropout else replace(spec, dropout=rate)


def train(spec: ModelSpec, datasets: dict[str, list[AlignedDataset]],
          hp: Hyperparams = Hyperparams()):
    """Mini-batch Adam over the globally shuffled training segments.

    ``datasets`` maps ``"train"`` (required), ``"validation"`` and ``"test"``
    to lists of per-channel datasets. Training accuracy is tallied from
    each batch's logits before its update. Validation accuracy (mean over
    items) is recorded every ``eval_every`` batches and at each epoch end.
    """
    start = time.perf_counter()
    train_sets = datasets.get("train") or []
    if not train_sets or sum(len(d) for d in train_sets) == 0:
        raise ValueError("training split is empty")
    for split in SPLITS:
        _check_data(spec, datasets.get(split) or [])
    spec = _with_dropout(spec, hp.dropout)

    x = np.concatenate([d.segments for d in train_sets]).astype(np.float64)
    y = np.concatenate([d.labels.classes for d in train_sets])
    rng = np.random.default_rng(hp.seed)
    params = init_params(spec, hp.seed)
    state = AdamState.for_params(params, hp.learning_rate)
    val_sets = datasets.get("validation") or []
    report = TrainReport()
    n_batches = 0

    for epoch in range(hp.epochs):
        order = rng.permutation(len(x))
        loss_sum, correct = 0.0, 0
        for lo in range(0, len(x), hp.batch_size):
            idx = order[lo: lo + hp.batch_size]
            loss, grads, logits = loss_and_grad(spec, params, x[idx], y[idx],
                                                rng=rng if spec.dropout else None,
                                                return_logits=True)
            loss_sum += loss * len(idx)
            correct += int(np.sum(predict_classes(logits) == y[idx]))
            params, state = adam_step(params, grads, state)
            n_batches += 1
            if val_sets and hp.eval_every and n_batches % hp.eval_every == 0:
                report.validation_trace.append((n_batches, _mean_accuracy(spec, params, val_sets)))
        report.train_loss.append(loss_sum / len(x))
        report.train_accuracy.append(correct / len(x))
        if val_sets and (not report.validation_trace or report.validation_trace[-1][0] != n_batches):
            report.validation_trace.append((n_batches, _mean_accuracy(spec, params, val_sets)))
        logger.info("epoch %d/%d loss %.5f train_acc %.4f%s", epoch + 1, hp.epochs,
                    report.train_loss[-1], report.train_accuracy[-1],
                    f" val_acc {report.validation_trace[-1][1]:.4f}" if val_sets else "")

    test_sets = datasets.get("test") or []
    if test_sets:
        report.test_accuracy = evaluate_files(spec, params, test_sets)
        report.mean_test_accuracy = average_accuracy(list(report.test_accuracy.values()))
        report.baseline_accuracy = average_accuracy([majority_baseline(d.labels)
                                                     for d in test_sets])
    report.wall_time = time.perf_counter() - start
    return params, report


# -- evaluation ----------------------------------------------------------

def predict_segments(spec: ModelSpec, params: dict, segments,
                     segment_duration: float = 0.1) -> LabelVector:
    """Binary: class 1 iff logit > 0. Four-class: argmax, lowest index wins ties."""
    x = getattr(segments, "rows", segments)
    x = np.asarray(x, dtype=np.float64)
    logits = [forward(spec, params, x[i: i + PREDICT_CHUNK])
              for i in range(0, len(x), PREDICT_CHUNK)]
    logits = np.concatenate(logits) if logits else np.zeros((0, spec.n_outputs))
    scheme = BINARY if spec.n_outputs == 1 else FOUR_CLASS
    return LabelVector(predict_classes(logits), scheme, segment_duration)


def file_accuracy(pred: LabelVector, truth: LabelVector) -> float:
    """Fraction of segments classified correctly."""
    p = np.asarray(getattr(pred, "classes", pred))
    t = np.asarray(getattr(truth, "classes", truth))
    if len(p) != len(t):
        raise ValueError(f"prediction length {len(p)} != truth length {len(t)}")
    if len(t) == 0:
        raise ValueError("cannot score an empty file")
    return float(np.count_nonzero(p == t)) / len(t)


def average_accuracy(per_file: Sequence[float]) -> float:
    if len(per_file) == 0:
        raise ValueError("no per-file accuracies to average")
    return math.fsum(per_file) / len(per_file)


def majority_baseline(labels: LabelVector) -> float:
    """Accuracy of always guessing the most frequent class."""
    c = np.asarray(getattr(labels, "classes", labels))
    if len(c) == 0:
        raise ValueError("majority baseline of an empty label vector")
    return float(np.bincount(c).max()) / len(c)


def evaluate_files(spec: ModelSpec, params: dict,
                   datasets: Sequence[AlignedDataset]) -> dict[str, float]:
    return {d.source_id: file_accuracy(predict_segments(spec, params, d.segments), d.labels)
            for d in datasets}


def _mean_accuracy(spec, params, datasets) -> float:
    return average_accuracy(list(evaluate_files(spec, params, datasets).values()))
