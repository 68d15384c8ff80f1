"""Architecture descriptions and the parameter layout they imply."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator, NamedTuple

KINDS = ("slp", "mlp", "rnn", "cnn")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ConvLayer:
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    pool: tuple[int, int] = (1, 1)


@dataclass(frozen=True)
class ModelSpec:
    """What to build.

    Dense kinds read rows of ``input_width`` samples; ``slp`` has exactly one
    hidden layer, ``mlp`` any number. ``rnn`` reads each row as ``steps``
    chunks of ``step_width`` samples (any residue ignored). ``cnn`` reads
    ``input_shape`` = (freq, time) spectrograms and uses ``layer_sizes`` as
    the dense head after the conv stack.
    """

    kind: str
    input_width: int = 0
    input_shape: tuple[int, int] = (0, 0)
    layer_sizes: tuple[int, ...] = ()
    lstm_layers: int = 0
    lstm_cells: int = 0
    steps: int = 0
    step_width: int = 0
    conv_spec: tuple[ConvLayer, ...] = field(default_factory=tuple)
    n_outputs: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(self.layer_sizes))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "conv_spec", tuple(
            c if isinstance(c, ConvLayer) else ConvLayer(c[0], tuple(c[1]), tuple(c[2]))
            for c in self.conv_spec))
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise SpecError(f"unknown model kind {self.kind!r}")
        if self.n_outputs not in (1, 4):
            raise SpecError(f"n_outputs must be 1 or 4, got {self.n_outputs}")
        if not 0.0 <= self.dropout < 1.0:
            raise SpecError(f"dropout must lie in [0, 1), got {self.dropout}")
        if any(s < 1 for s in self.layer_sizes):
            raise SpecError("hidden layer sizes must be positive")
        if self.kind == "slp" and len(self.layer_sizes) != 1:
            raise SpecError("slp takes exactly one hidden layer")
        if self.kind in ("slp", "mlp", "rnn") and self.input_width < 1:
            raise SpecError(f"{self.kind} needs input_width")
        if self.kind == "rnn":
            if min(self.lstm_layers, self.lstm_cells, self.steps, self.step_width) < 1:
                raise SpecError("rnn needs lstm_layers, lstm_cells, steps, step_width >= 1")
            if self.steps * self.step_width > self.input_width:
                raise SpecError(
                    f"{self.steps} steps x {self.step_width} exceed input width {self.input_width}"
                )
            if self.layer_sizes:
                raise SpecError("rnn feeds its last LSTM state straight to the output layer")
        if self.kind == "cnn":
            if len(self.input_shape) != 2 or min(self.input_shape) < 1:
                raise SpecError("cnn needs a 2-d input_shape")
            if not self.conv_spec:
                raise SpecError("cnn needs at least one conv layer")
            self.conv_output_shape()

    def conv_output_shape(self) -> tuple[int, int, int]:
        """(channels, height, width) after the conv/pool stack."""
        c, h, w = 1, *self.input_shape
        for i, layer in enumerate(self.conv_spec):
            kh, kw = layer.kernel
            ph, pw = layer.pool
            h, w = h - kh + 1, w - kw + 1
            if h < 1 or w < 1:
                raise SpecError(f"conv layer {i} kernel {layer.kernel} larger than its input")
            h, w = h // ph, w // pw
            if h < 1 or w < 1:
                raise SpecError(f"conv layer {i} pool {layer.pool} larger than its input")
            c = layer.out_channels
        return c, h, w

    @property
    def input_dims(self) -> tuple[int, ...]:
        return self.input_shape if self.kind == "cnn" else (self.input_width,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_spec"] = [[c.out_channels, list(c.kernel), list(c.pool)] for c in self.conv_spec]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        return cls(**d)


class ParamInfo(NamedTuple):
    name: str
    shape: tuple[int, ...]
    fan_in: int
    fan_out: int
    bias: bool


def param_layout(spec: ModelSpec) -> Iterator[ParamInfo]:
    """Every learnable tensor in a fixed order.

    LSTM layers keep gates side by side along the last axis in the order
    input, forget, output, candidate.
    """
    def dense(prefix, n_in, n_out):
        yield ParamInfo(f"{prefix}.W", (n_in, n_out), n_in, n_out, False)
        yield ParamInfo(f"{prefix}.b", (n_out,), n_in, n_out, True)

    if spec.kind == "rnn":
        n_in, hid = spec.step_width, spec.lstm_cells
        for l in range(spec.lstm_layers):
            yield ParamInfo(f"lstm{l}.Wx", (n_in, 4 * hid), n_in, 4 * hid, False)
            yield ParamInfo(f"lstm{l}.Wh", (hid, 4 * hid), hid, 4 * hid, False)
            yield ParamInfo(f"lstm{l}.b", (4 * hid,), n_in, 4 * hid, True)
            n_in = hid
    elif spec.kind == "cnn":
        c_in = 1
        for l, layer in enumerate(spec.conv_spec):
            kh, kw = layer.kernel
            c_out = layer.out_channels
            yield ParamInfo(f"conv{l}.K", (c_out, c_in, kh, kw),
                            c_in * kh * kw, c_out * kh * kw, False)
            yield ParamInfo(f"conv{l}.b", (c_out,), c_in * kh * kw, c_out * kh * kw, True)
            c_in = c_out
        c, h, w = spec.conv_output_shape()
        n_in = c * h * w
    else:
        n_in = spec.input_width

    if spec.kind != "rnn":
        for l, size in enumerate(spec.layer_sizes):
            yield from dense(f"dense{l}", n_in, size)
            n_in = size
    yield from dense("out", n_in, spec.n_outputs)


def n_params(spec: ModelSpec) -> int:
    total = 0
    for info in param_layout(spec):
        count = 1
        for d in info.shape:
            count *= d
        total += count
    return total
