"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import init_params, loss_and_grad
from .spec import ModelSpec


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, abs_floor: float = 1e-7) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, abs_floor)``; the floor keeps near-zero entries absolute."""
    diff = np.abs(analytic - numeric)
    return diff / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)


def numeric_grad(f, params: dict, h: float = 1e-5) -> dict:
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f(params)
            flat[i] = old - h
            down = f(params)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def random_batch(spec: ModelSpec, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    x = rng.normal(size=(n, *spec.input_dims))
    hi = 2 if spec.n_outputs == 1 else 4
    return x, rng.integers(0, hi, size=n)


def grad_check(spec: ModelSpec, seed: int = 0, tolerance: float = 1e-4,
               batch_size: int = 4, h: float = 1e-5) -> GradCheckReport:
    """Compare backprop against central differences on a random batch."""
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed)
    # non-zero biases so every bias path is exercised
    for name, p in params.items():
        if p.ndim == 1:
            p += rng.normal(scale=0.1, size=p.shape)
    x, y = random_batch(spec, batch_size, rng)
    _, analytic = loss_and_grad(spec, params, x, y)
    numeric = numeric_grad(lambda p: loss_and_grad(spec, p, x, y)[0], params, h)
    worst, worst_err, count = "", 0.0, 0
    for name in params:
        err = relative_error(analytic[name], numeric[name])
        count += err.size
        if err.size and err.max() > worst_err:
            worst, worst_err = name, float(err.max())
    return GradCheckReport(worst_err, worst, count, tolerance)
