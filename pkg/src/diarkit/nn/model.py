"""Forward and backward passes for the dense, LSTM, and convolutional models.

Parameters live in a plain ``dict[str, ndarray]`` keyed as laid out by
:func:`diarkit.nn.spec.param_layout`. Everything runs in float64.
"""

from __future__ import annotations

import numpy as np

from .spec import ModelSpec, SpecError, param_layout

ParamSet = dict  # name -> ndarray


def init_params(spec: ModelSpec, seed: int = 0) -> ParamSet:
    """Glorot-uniform weights, zero biases, LSTM forget-gate biases at 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for info in param_layout(spec):
        if info.bias:
            p = np.zeros(info.shape)
            if info.name.startswith("lstm"):
                hid = info.shape[0] // 4
                p[hid:2 * hid] = 1.0
        else:
            r = np.sqrt(6.0 / (info.fan_in + info.fan_out))
            p = rng.uniform(-r, r, size=info.shape)
        params[info.name] = p
    return params


def check_params(spec: ModelSpec, params: ParamSet) -> None:
    for info in param_layout(spec):
        if info.name not in params:
            raise SpecError(f"missing parameter {info.name}")
        if params[info.name].shape != info.shape:
            raise SpecError(f"{info.name} has shape {params[info.name].shape}, "
                            f"expected {info.shape}")


def sigmoid(z):
    # exp of a non-positive argument only; no overflow for any finite z
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def relu(z):
    return np.maximum(z, 0.0)


def rnn_steps(batch: np.ndarray, steps: int, step_width: int) -> np.ndarray:
    """Reshape rows into ``(n, steps, step_width)``, ignoring trailing samples."""
    return batch[:, : steps * step_width].reshape(len(batch), steps, step_width)


def _check_batch(spec: ModelSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1:] != spec.input_dims:
        raise SpecError(f"batch of shape {batch.shape} does not fit {spec.kind} input "
                        f"{spec.input_dims}")
    return batch


def _dropout_mask(rng, rate: float, shape) -> np.ndarray | None:
    if rng is None or rate == 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


# -- dense ---------------------------------------------------------------

def _dense_forward(params, prefix_layers, h, dropout, rng, caches):
    for name in prefix_layers:
        z = h @ params[f"{name}.W"] + params[f"{name}.b"]
        a = relu(z)
        mask = _dropout_mask(rng, dropout, a.shape)
        if mask is not None:
            a = a * mask
        caches.append((name, h, z, mask))
        h = a
    return h


def _dense_backward(params, grads, caches, dh):
    for name, h_in, z, mask in reversed(caches):
        if mask is not None:
            dh = dh * mask
        dz = dh * (z > 0)
        grads[f"{name}.W"] = h_in.T @ dz
        grads[f"{name}.b"] = dz.sum(axis=0)
        dh = dz @ params[f"{name}.W"].T
    return dh


# -- LSTM ----------------------------------------------------------------

def _lstm_forward(params, layer, x):
    """One LSTM layer over ``x`` of shape (n, T, d); returns hidden states and a cache."""
    wx, wh, b = params[f"lstm{layer}.Wx"], params[f"lstm{layer}.Wh"], params[f"lstm{layer}.b"]
    n, steps, _ = x.shape
    hid = wh.shape[0]
    xw = (x.reshape(n * steps, -1) @ wx).reshape(n, steps, 4 * hid) + b
    hs = np.zeros((n, steps + 1, hid))
    cs = np.zeros((n, steps + 1, hid))
    gates = np.empty((n, steps, 4 * hid))
    tanh_c = np.empty((n, steps, hid))
    for t in range(steps):
        a = xw[:, t] + hs[:, t] @ wh
        g = gates[:, t]
        g[:, : 3 * hid] = sigmoid(a[:, : 3 * hid])
        g[:, 3 * hid:] = np.tanh(a[:, 3 * hid:])
        i, f, o, cand = g[:, :hid], g[:, hid:2 * hid], g[:, 2 * hid:3 * hid], g[:, 3 * hid:]
        cs[:, t + 1] = f * cs[:, t] + i * cand
        tanh_c[:, t] = np.tanh(cs[:, t + 1])
        hs[:, t + 1] = o * tanh_c[:, t]
    return hs[:, 1:], (x, hs, cs, gates, tanh_c)


def _lstm_backward(params, grads, layer, cache, dh_seq):
    x, hs, cs, gates, tanh_c = cache
    wx, wh = params[f"lstm{layer}.Wx"], params[f"lstm{layer}.Wh"]
    n, steps, _ = x.shape
    hid = wh.shape[0]
    da_all = np.empty((n, steps, 4 * hid))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((n, hid))
    dc_next = np.zeros((n, hid))
    for t in reversed(range(steps)):
        g = gates[:, t]
        i, f, o, cand = g[:, :hid], g[:, hid:2 * hid], g[:, 2 * hid:3 * hid], g[:, 3 * hid:]
        dh = dh_seq[:, t] + dh_next
        dc = dh * o * (1.0 - tanh_c[:, t] ** 2) + dc_next
        da = da_all[:, t]
        da[:, :hid] = dc * cand * i * (1.0 - i)
        da[:, hid:2 * hid] = dc * cs[:, t] * f * (1.0 - f)
        da[:, 2 * hid:3 * hid] = dh * tanh_c[:, t] * o * (1.0 - o)
        da[:, 3 * hid:] = dc * i * (1.0 - cand ** 2)
        dwh += hs[:, t].T @ da
        dh_next = da @ wh.T
        dc_next = dc * f
    flat = da_all.reshape(n * steps, 4 * hid)
    grads[f"lstm{layer}.Wx"] = x.reshape(n * steps, -1).T @ flat
    grads[f"lstm{layer}.Wh"] = dwh
    grads[f"lstm{layer}.b"] = flat.sum(axis=0)
    return (flat @ wx.T).reshape(x.shape)


# -- convolution ---------------------------------------------------------

def _im2col(x, kh, kw):
    """(n, c, h, w) -> ((n*h'*w'), c*kh*kw) patches for a valid cross-correlation."""
    n, c, h, w = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    ho, wo = h - kh + 1, w - kw + 1
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw), (ho, wo)


def _conv_forward(params, layer, x):
    k, b = params[f"conv{layer}.K"], params[f"conv{layer}.b"]
    c_out, _, kh, kw = k.shape
    cols, (ho, wo) = _im2col(x, kh, kw)
    out = cols @ k.reshape(c_out, -1).T + b
    out = out.reshape(len(x), ho, wo, c_out).transpose(0, 3, 1, 2)
    return out, (x.shape, cols)


def _conv_backward(params, grads, layer, cache, dout):
    x_shape, cols = cache
    k = params[f"conv{layer}.K"]
    c_out, c_in, kh, kw = k.shape
    n, _, ho, wo = dout.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    grads[f"conv{layer}.K"] = (d2.T @ cols).reshape(k.shape)
    grads[f"conv{layer}.b"] = d2.sum(axis=0)
    dcols = (d2 @ k.reshape(c_out, -1)).reshape(n, ho, wo, c_in, kh, kw)
    dx = np.zeros(x_shape)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


def _pool_forward(x, ph, pw):
    n, c, h, w = x.shape
    hp, wp = h // ph, w // pw
    blocks = (x[:, :, : hp * ph, : wp * pw]
              .reshape(n, c, hp, ph, wp, pw)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, hp, wp, ph * pw))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def _pool_backward(cache, dout, ph, pw):
    """Route each pooled gradient to the (first) maximal input of its window."""
    x_shape, arg = cache
    n, c, h, w = x_shape
    hp, wp = arg.shape[2:]
    routed = np.zeros((n, c, hp, wp, ph * pw))
    np.put_along_axis(routed, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :, : hp * ph, : wp * pw] = (routed.reshape(n, c, hp, wp, ph, pw)
                                      .transpose(0, 1, 2, 4, 3, 5)
                                      .reshape(n, c, hp * ph, wp * pw))
    return dx


# -- whole model ---------------------------------------------------------

def _forward(spec: ModelSpec, params: ParamSet, batch: np.ndarray, rng=None):
    batch = _check_batch(spec, batch)
    caches: dict = {"dense": []}
    if spec.kind == "rnn":
        h = rnn_steps(batch, spec.steps, spec.step_width)
        caches["lstm"] = []
        for l in range(spec.lstm_layers):
            h, cache = _lstm_forward(params, l, h)
            mask = _dropout_mask(rng, spec.dropout, h.shape)
            if mask is not None:
                h = h * mask
            caches["lstm"].append((cache, mask))
        h = h[:, -1]
    elif spec.kind == "cnn":
        h = batch[:, None, :, :]
        caches["conv"] = []
        for l, layer in enumerate(spec.conv_spec):
            z, ccache = _conv_forward(params, l, h)
            a = relu(z)
            pcache = None
            if layer.pool != (1, 1):
                a, pcache = _pool_forward(a, *layer.pool)
            caches["conv"].append((ccache, z, pcache))
            h = a
        caches["flat_shape"] = h.shape
        h = h.reshape(len(h), -1)
    else:
        h = batch

    names = [f"dense{l}" for l in range(len(spec.layer_sizes))] if spec.kind != "rnn" else []
    h = _dense_forward(params, names, h, spec.dropout, rng, caches["dense"])
    logits = h @ params["out.W"] + params["out.b"]
    caches["top"] = h
    return logits, caches


def forward(spec: ModelSpec, params: ParamSet, batch) -> np.ndarray:
    """Logits of shape ``(n, n_outputs)``; no output activation, no dropout."""
    return _forward(spec, params, batch)[0]


def _backward(spec, params, caches, dlogits) -> ParamSet:
    grads = {}
    grads["out.W"] = caches["top"].T @ dlogits
    grads["out.b"] = dlogits.sum(axis=0)
    dh = dlogits @ params["out.W"].T
    dh = _dense_backward(params, grads, caches["dense"], dh)

    if spec.kind == "rnn":
        n, hid = dh.shape
        dseq = np.zeros((n, spec.steps, hid))
        dseq[:, -1] = dh
        for l in reversed(range(spec.lstm_layers)):
            cache, mask = caches["lstm"][l]
            if mask is not None:
                dseq = dseq * mask
            dseq = _lstm_backward(params, grads, l, cache, dseq)
    elif spec.kind == "cnn":
        dh = dh.reshape(caches["flat_shape"])
        for l in reversed(range(len(spec.conv_spec))):
            ccache, z, pcache = caches["conv"][l]
            if pcache is not None:
                dh = _pool_backward(pcache, dh, *spec.conv_spec[l].pool)
            dh = _conv_backward(params, grads, l, ccache, dh * (z > 0))
    return {name: grads[name] for name in params}


def _targets(spec: ModelSpec, labels, n: int) -> np.ndarray:
    y = np.asarray(getattr(labels, "classes", labels)).reshape(-1)
    if len(y) != n:
        raise SpecError(f"{len(y)} labels for a batch of {n}")
    hi = 1 if spec.n_outputs == 1 else 3
    if y.size and (y.min() < 0 or y.max() > hi):
        raise SpecError(f"labels must lie in [0, {hi}] for {spec.n_outputs} output(s)")
    return y


def binary_cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ``softplus(z) - y z`` and its gradient with respect to ``z``."""
    z = logits.reshape(-1)
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    dz = (sigmoid(z) - y) / len(z)
    return float(loss), dz.reshape(logits.shape)


def softmax_cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    n = len(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -np.mean(log_p[np.arange(n), y])
    dz = np.exp(log_p)
    dz[np.arange(n), y] -= 1.0
    return float(loss), dz / n


def loss_and_grad(spec: ModelSpec, params: ParamSet, batch, labels, rng=None,
                  return_logits: bool = False):
    """Mean cross-entropy over the batch and its exact gradient.

    Dropout is active only when ``rng`` is given and ``spec.dropout > 0``.
    """
    logits, caches = _forward(spec, params, batch, rng)
    y = _targets(spec, labels, len(logits))
    if spec.n_outputs == 1:
        loss, dlogits = binary_cross_entropy(logits, y)
    else:
        loss, dlogits = softmax_cross_entropy(logits, y)
    grads = _backward(spec, params, caches, dlogits)
    if return_logits:
        return loss, grads, logits
    return loss, grads


def predict_classes(logits: np.ndarray) -> np.ndarray:
    """Binary: 1 iff logit > 0. Multiclass: argmax, lowest index on ties."""
    logits = np.asarray(logits)
    if logits.ndim == 1 or logits.shape[1] == 1:
        return (logits.reshape(-1) > 0).astype(np.int64)
    return logits.argmax(axis=1).astype(np.int64)
