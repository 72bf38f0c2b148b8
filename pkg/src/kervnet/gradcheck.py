"""Central finite-difference verification of every layer's backward pass."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import layers as L
from .errors import ConfigurationError
from .tensor import Rng

STEP = 1e-5
TOLERANCE = 1e-4
# Entries smaller than FLOOR times the tensor's largest gradient (or 1) are
# judged on that absolute scale: finite-difference roundoff is ~1e-16 * |loss| / h.
FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if not a.size:
        return 0.0
    floor = FLOOR * max(1.0, float(np.max(np.abs(a))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (mutated in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def check_layer(layer: L.Layer, x: np.ndarray, rng: Rng, train: bool = True,
                corrupt: bool = False) -> float:
    """Max relative error over the input and every parameter of ``layer``.

    The scalar probed is ``sum(forward(x) * R)`` for a fixed random ``R``.
    """
    out = layer.forward(x, train)
    weights = rng.normal(out.output.shape)
    stream = getattr(layer, "rng", None)
    seed = stream.seed if stream is not None else None

    def loss() -> float:
        if seed is not None:
            layer.rng = Rng(seed)
        return float(np.sum(layer.forward(x, train).output * weights))

    if seed is not None:
        layer.rng = Rng(seed)
    io = layer.forward(x, train)
    dx, pgrads = layer.backward(weights, io.cache)
    if corrupt:
        dx = dx * 1.01 + 1e-3
    errors = [relative_error(dx, numeric_gradient(loss, x))]
    for name, value in layer.params.items():
        errors.append(relative_error(pgrads[name], numeric_gradient(loss, value)))
    return max(errors)


def _signal(rng: Rng, n, length, channels, margin=0.0):
    x = rng.normal((n, length, channels))
    if margin:
        # keep clear of the ReLU kink
        x = np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin, x)
    return x


def _make(tag: str, rng: Rng):
    n = 3
    length = int(rng.integers(6, 12))
    c = int(rng.integers(1, 4))
    f = int(rng.integers(1, 4))
    size = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    padding = "same" if rng.random() < 0.5 else "valid"
    if padding == "valid":
        length -= (length - size) % stride
    if tag == "conv":
        return L.Conv1D(c, f, size, stride, padding, rng=rng), _signal(rng, n, length, c)
    if tag.startswith("kerv"):
        degree = int(tag[4])
        kp = float(size * c) if tag.endswith("-kp") else 1.0
        kernel = L.KernelSpec(degree=degree, cp=1.0, kp=kp)
        layer = L.Kerv1D(c, f, size, kernel, stride, padding, rng=rng)
        return layer, _signal(rng, n, length, c)
    if tag == "tconv":
        layer = L.ConvTranspose1D(c, f, size, stride, padding, rng=rng)
        layer.params["bias"] = rng.normal((f,))
        return layer, _signal(rng, n, length, c)
    if tag == "pool":
        return L.MaxPool1D(2, int(rng.integers(1, 3))), _signal(rng, n, length, c)
    if tag == "upsample":
        return L.Upsample1D(int(rng.integers(1, 4))), _signal(rng, n, length, c)
    if tag in ("batchnorm", "batchnorm-infer"):
        layer = L.BatchNorm(c)
        layer.params["gamma"] = rng.uniform((c,), 0.5, 1.5)
        layer.params["beta"] = rng.normal((c,))
        layer.buffers["running_mean"] = rng.normal((c,))
        layer.buffers["running_var"] = rng.uniform((c,), 0.5, 2.0)
        return layer, _signal(rng, n, length, c)
    if tag == "dense":
        layer = L.Dense(length, f + 2, rng=rng)
        layer.params["bias"] = rng.normal((f + 2,))
        return layer, rng.normal((n, length))
    if tag == "relu":
        return L.ReLU(), _signal(rng, n, length, c, margin=1e-3)
    if tag == "tanh":
        return L.Tanh(), _signal(rng, n, length, c)
    if tag == "softmax":
        return L.Softmax(), rng.normal((n, f + 2))
    if tag == "dropout":
        return L.Dropout(0.3, rng.spawn("dropout")), _signal(rng, n, length, c)
    raise ConfigurationError(f"unknown layer tag {tag!r}; expected one of {LAYER_TAGS}")


LAYER_TAGS = (
    "conv", "kerv2", "kerv3", "kerv4", "kerv3-kp", "tconv", "pool", "upsample",
    "batchnorm", "batchnorm-infer", "dense", "relu", "tanh", "softmax", "dropout",
)


def run_gradcheck(tag: str, seed: int = 0, instances: int = 20, corrupt: bool = False) -> float:
    """Max relative error of ``tag`` over ``instances`` random small cases."""
    if tag not in LAYER_TAGS:
        raise ConfigurationError(f"unknown layer tag {tag!r}; expected one of {LAYER_TAGS}")
    rng = Rng(seed).spawn(tag)
    worst = 0.0
    for _ in range(instances):
        layer, x = _make(tag, rng)
        train = tag != "batchnorm-infer"
        worst = max(worst, check_layer(layer, x, rng, train=train, corrupt=corrupt))
    return worst
