"""Forward and backward passes for every layer kind.

Batched signals use the layout ``(batch, time, channels)``. The functional
ops (``convolve``, ``kervolve``, ...) return a :class:`LayerIO` whose cache is
fed back into the matching ``*_backward`` function; the layer classes at the
bottom of the module wrap them with parameters and cache ownership checks.

Convolution is implemented as cross-correlation: filters are learned, so the
index reversal that turns one into the other is absorbed by the weights.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ContractError, NumericDivergenceError, ShapeError
from .tensor import Rng, Tensor, as_tensor

PADDINGS = ("valid", "same")


@dataclass
class LayerIO:
    output: Tensor
    cache: dict = field(default_factory=dict)


@dataclass(frozen=True)
class KernelSpec:
    """Polynomial kernel ``(x.v / kp + cp) ** degree``.

    ``kind="linear"`` ignores the other fields and behaves as degree 1,
    ``cp=0``, ``kp=1``.
    """

    kind: str = "polynomial"
    degree: int = 2
    cp: float = 1.0
    kp: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial"):
            raise ConfigurationError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "polynomial":
            if int(self.degree) != self.degree or not 1 <= self.degree <= 4:
                raise ConfigurationError(f"kernel degree must be in 1..4, got {self.degree}")
            if self.cp < 0:
                raise ConfigurationError(f"kernel bias cp must be >= 0, got {self.cp}")
            if not self.kp > 0:
                raise ConfigurationError(f"kernel normalizer kp must be > 0, got {self.kp}")

    def effective(self) -> tuple[int, float, float]:
        if self.kind == "linear":
            return 1, 0.0, 1.0
        return int(self.degree), float(self.cp), float(self.kp)


LINEAR = KernelSpec("linear")


@dataclass
class ConvParams:
    """Filters ``(num_filters, size, in_channels)`` plus optional per-filter bias.

    For :func:`transposed_convolve` the same parameters describe the forward
    convolution being transposed, and ``bias`` (if any) has one entry per
    *output* channel of the transposed op, i.e. ``in_channels``.
    """

    filters: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: str = "valid"

    def __post_init__(self):
        if self.padding not in PADDINGS:
            raise ConfigurationError(f"padding must be one of {PADDINGS}, got {self.padding!r}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ConfigurationError(f"stride must be a positive integer, got {self.stride}")


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    epsilon: float = 1e-5
    momentum: float = 0.9

    @classmethod
    def init(cls, channels: int, **kw) -> "BatchNormParams":
        return cls(np.ones(channels), np.zeros(channels), np.zeros(channels), np.ones(channels), **kw)


# ---------------------------------------------------------------- kernels


def poly_kernel(x, v, k: KernelSpec) -> float:
    x = as_tensor(x).ravel()
    v = as_tensor(v).ravel()
    if x.size != v.size:
        raise ShapeError(f"poly_kernel: length mismatch {x.size} vs {v.size}")
    d, cp, kp = k.effective()
    return float((np.dot(x, v) / kp + cp) ** d)


def poly_kernel_grad(x, v, k: KernelSpec) -> tuple[Tensor, Tensor]:
    """Returns ``(d kappa / d x, d kappa / d v)``."""
    x = as_tensor(x)
    v = as_tensor(v)
    if x.size != v.size:
        raise ShapeError(f"poly_kernel_grad: length mismatch {x.size} vs {v.size}")
    d, cp, kp = k.effective()
    base = float(np.dot(x.ravel(), v.ravel())) / kp + cp
    scale = d * base ** (d - 1) / kp
    return scale * v, scale * x


# ---------------------------------------------------------------- geometry


def conv_geometry(length: int, size: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Output extent and (left, right) zero padding for a strided window op."""
    if padding == "valid":
        if size > length:
            raise ConfigurationError(f"kernel extent {size} exceeds input extent {length}")
        if (length - size) % stride:
            raise ConfigurationError(
                f"non-integer output extent: ({length} - {size}) / {stride} + 1 under 'valid'"
            )
        return (length - size) // stride + 1, 0, 0
    if padding == "same":
        out = -(-length // stride)
        total = max((out - 1) * stride + size - length, 0)
        return out, total // 2, total - total // 2
    raise ConfigurationError(f"padding must be one of {PADDINGS}, got {padding!r}")


def transposed_length(length: int, size: int, stride: int, padding: str) -> int:
    """Default output extent of a transposed convolution."""
    if padding == "same":
        return length * stride
    return (length - 1) * stride + size


def _batched(x: Tensor) -> Tensor:
    if x.ndim == 1:
        return x[None, :, None]
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return x
    raise ShapeError(f"expected a 1-, 2- or 3-D signal, got shape {x.shape}")


def _filters3d(v: Tensor) -> Tensor:
    if v.ndim == 1:
        return v[None, :, None]
    if v.ndim == 2:
        return v[None]
    if v.ndim == 3:
        return v
    raise ShapeError(f"expected 1-, 2- or 3-D filters, got shape {v.shape}")


def _unbatch(out: Tensor, ndim: int) -> Tensor:
    if ndim == 3:
        return out
    out = out[0]
    if ndim == 1 and out.shape[-1] == 1:
        return out[:, 0]
    return out


def _pad_time(x: Tensor, left: int, right: int) -> Tensor:
    if left == 0 and right == 0:
        return x
    return np.pad(x, ((0, 0), (left, right), (0, 0)))


def _im2col(xp: Tensor, size: int, stride: int, out_len: int) -> Tensor:
    """``(N, Lp, C)`` -> ``(N, out_len, size * C)`` with (tap, channel) flattening."""
    win = sliding_window_view(xp, size, axis=1)[:, ::stride][:, :out_len]
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(xp.shape[0], out_len, -1)


def _col2im(dcols: Tensor, padded_len: int, size: int, stride: int) -> Tensor:
    """Adjoint of :func:`_im2col`: scatter-add window gradients back onto time."""
    n, out_len, _ = dcols.shape
    dcols = dcols.reshape(n, out_len, size, -1)
    dxp = np.zeros((n, padded_len, dcols.shape[-1]))
    stop = stride * (out_len - 1) + 1
    for m in range(size):
        dxp[:, m : m + stop : stride] += dcols[:, :, m]
    return dxp


def _check_cache(cache: dict, op: str, grad: Tensor) -> None:
    if cache.get("op") != op:
        raise ContractError(f"backward of {op!r} received a cache from {cache.get('op')!r}")
    if grad.shape != cache["out_shape"]:
        raise ContractError(
            f"{op} backward: upstream gradient shape {grad.shape} != forward output {cache['out_shape']}"
        )


# ---------------------------------------------------------------- (ker)volution


def _window_products(X, p: ConvParams, op: str):
    X = as_tensor(X)
    V = _filters3d(as_tensor(p.filters))
    x3 = _batched(X)
    if x3.shape[2] != V.shape[2]:
        raise ShapeError(f"{op}: input has {x3.shape[2]} channels, filters expect {V.shape[2]}")
    n, length, _ = x3.shape
    size = V.shape[1]
    out_len, left, right = conv_geometry(length, size, p.stride, p.padding)
    xp = _pad_time(x3, left, right)
    cols = _im2col(xp, size, p.stride, out_len)
    wmat = V.reshape(V.shape[0], -1)
    z = cols @ wmat.T
    geom = dict(
        x_shape=X.shape, v_shape=as_tensor(p.filters).shape, length=length, size=size,
        stride=p.stride, left=left, padded=xp.shape[1], cols=cols, wmat=wmat,
    )
    return z, geom, X.ndim


def convolve(X, p: ConvParams) -> LayerIO:
    """Strided cross-correlation plus per-filter bias."""
    z, geom, ndim = _window_products(X, p, "convolve")
    if p.bias is not None:
        z = z + as_tensor(p.bias)
    out = _unbatch(z, ndim)
    return LayerIO(out, dict(op="convolve", out_shape=out.shape, z_shape=z.shape,
                             has_bias=p.bias is not None, **geom))


def _conv_like_backward(dz: Tensor, cache: dict):
    n, out_len, nf = dz.shape
    cols, wmat = cache["cols"], cache["wmat"]
    dw = (dz.reshape(-1, nf).T @ cols.reshape(-1, cols.shape[-1])).reshape(cache["v_shape"])
    dxp = _col2im(dz @ wmat, cache["padded"], cache["size"], cache["stride"])
    left = cache["left"]
    dx = dxp[:, left : left + cache["length"]].reshape(cache["x_shape"])
    return dx, dw


def convolve_backward(grad, cache: dict) -> tuple[Tensor, dict]:
    grad = as_tensor(grad)
    _check_cache(cache, "convolve", grad)
    dz = grad.reshape(cache["z_shape"])
    dx, dw = _conv_like_backward(dz, cache)
    grads = {"filters": dw}
    if cache["has_bias"]:
        grads["bias"] = dz.sum(axis=(0, 1))
    return dx, grads


def kervolve(X, p: ConvParams, k: KernelSpec, name: str = "kervolve") -> LayerIO:
    """Convolution geometry with each window/filter product replaced by the kernel.

    No additive bias is applied outside the kernel; ``k.cp`` plays that role.
    """
    d, cp, kp = k.effective()
    # overflow is reported below as a named error, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        z, geom, ndim = _window_products(X, p, "kervolve")
        base = z / kp + cp
        y = base**d
    if not np.all(np.isfinite(y)):
        raise NumericDivergenceError(name)
    out = _unbatch(y, ndim)
    return LayerIO(out, dict(op="kervolve", out_shape=out.shape, z_shape=z.shape,
                             base=base, degree=d, kp=kp, **geom))


def kervolve_backward(grad, cache: dict) -> tuple[Tensor, dict]:
    grad = as_tensor(grad)
    _check_cache(cache, "kervolve", grad)
    d, kp = cache["degree"], cache["kp"]
    dz = grad.reshape(cache["z_shape"]) * (d * cache["base"] ** (d - 1) / kp)
    dx, dw = _conv_like_backward(dz, cache)
    return dx, {"filters": dw}


def transposed_convolve(Y, p: ConvParams, output_length: int | None = None) -> LayerIO:
    """Exact adjoint of :func:`convolve` with the same parameters (bias aside).

    ``Y`` has ``num_filters`` channels; the result has ``in_channels``. The
    output extent defaults to ``len * stride`` under 'same' and
    ``(len - 1) * stride + size`` under 'valid'.
    """
    Y = as_tensor(Y)
    V = _filters3d(as_tensor(p.filters))
    y3 = _batched(Y)
    if Y.ndim == 1 and V.shape[0] != 1:
        raise ShapeError("1-D input to transposed_convolve needs a single filter")
    nf, size, _ = V.shape
    if y3.shape[2] != nf:
        raise ShapeError(f"transposed_convolve: input has {y3.shape[2]} channels, filters provide {nf}")
    ylen = y3.shape[1]
    length = output_length or transposed_length(ylen, size, p.stride, p.padding)
    out_len, left, right = conv_geometry(length, size, p.stride, p.padding)
    if out_len != ylen:
        raise ShapeError(
            f"transposed_convolve: output extent {length} does not map back to input extent {ylen}"
        )
    wmat = V.reshape(nf, -1)
    padded = length + left + right
    xp = _col2im(y3 @ wmat, padded, size, p.stride)
    out = xp[:, left : left + length]
    if p.bias is not None:
        out = out + as_tensor(p.bias)
    result = _unbatch(out, Y.ndim)
    return LayerIO(result, dict(
        op="transposed_convolve", out_shape=result.shape, o_shape=out.shape, y3=y3,
        y_shape=Y.shape, v_shape=as_tensor(p.filters).shape, wmat=wmat, size=size,
        stride=p.stride, left=left, right=right, has_bias=p.bias is not None,
    ))


def transposed_convolve_backward(grad, cache: dict) -> tuple[Tensor, dict]:
    grad = as_tensor(grad)
    _check_cache(cache, "transposed_convolve", grad)
    g = grad.reshape(cache["o_shape"])
    y3, wmat = cache["y3"], cache["wmat"]
    gp = _pad_time(g, cache["left"], cache["right"])
    cols = _im2col(gp, cache["size"], cache["stride"], y3.shape[1])
    dy = (cols @ wmat.T).reshape(cache["y_shape"])
    nf = wmat.shape[0]
    dw = (y3.reshape(-1, nf).T @ cols.reshape(-1, cols.shape[-1])).reshape(cache["v_shape"])
    grads = {"filters": dw}
    if cache["has_bias"]:
        grads["bias"] = g.sum(axis=(0, 1))
    return dy, grads


# ---------------------------------------------------------------- resampling


def max_pool(X, window: int, stride: int | None = None) -> LayerIO:
    """Max over windows along time; trailing partial windows are dropped."""
    X = as_tensor(X)
    stride = stride or window
    x3 = _batched(X)
    length = x3.shape[1]
    if window > length:
        raise ConfigurationError(f"pool window {window} exceeds input extent {length}")
    out_len = (length - window) // stride + 1
    win = sliding_window_view(x3, window, axis=1)[:, ::stride][:, :out_len]
    arg = win.argmax(axis=-1)
    out3 = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    out = _unbatch(out3, X.ndim)
    pos = arg + (np.arange(out_len) * stride)[None, :, None]
    return LayerIO(out, dict(op="max_pool", out_shape=out.shape, o_shape=out3.shape,
                             x_shape=X.shape, x3_shape=x3.shape, pos=pos,
                             overlap=stride < window))


def max_pool_backward(grad, cache: dict) -> tuple[Tensor, dict]:
    grad = as_tensor(grad)
    _check_cache(cache, "max_pool", grad)
    g = grad.reshape(cache["o_shape"])
    dx = np.zeros(cache["x3_shape"])
    n, out_len, c = g.shape
    ni = np.arange(n)[:, None, None]
    ci = np.arange(c)[None, None, :]
    if cache["overlap"]:
        np.add.at(dx, (ni, cache["pos"], ci), g)
    else:
        dx[ni, cache["pos"], ci] = g
    return dx.reshape(cache["x_shape"]), {}


def upsample_nearest(X, factor: int) -> LayerIO:
    if int(factor) != factor or factor < 1:
        raise ConfigurationError(f"upsample factor must be a positive integer, got {factor}")
    X = as_tensor(X)
    axis = 1 if X.ndim == 3 else 0
    out = np.repeat(X, int(factor), axis=axis)
    return LayerIO(out, dict(op="upsample", out_shape=out.shape, x_shape=X.shape,
                             axis=axis, factor=int(factor)))


def upsample_backward(grad, cache: dict) -> tuple[Tensor, dict]:
    grad = as_tensor(grad)
    _check_cache(cache, "upsample", grad)
    axis, f = cache["axis"], cache["factor"]
    shape = list(cache["x_shape"])
    split = shape[: axis + 1] + [f] + shape[axis + 1 :]
    return grad.reshape(split).sum(axis=axis + 1), {}


# ---------------------------------------------------------------- normalization


def batch_norm(X, p: BatchNormParams, mode: str = "train") -> LayerIO:
    """Per-channel normalization over every axis but the last.

    In train mode the updated running statistics are returned in
    ``cache["running_mean"]`` / ``cache["running_var"]``; ``p`` is untouched.
    """
    X = as_tensor(X)
    x2 = X[:, None] if X.ndim == 1 else X
    axes = tuple(range(x2.ndim - 1))
    if mode == "train":
        if x2.shape[0] < 2:
            raise ConfigurationError("batch norm in train mode needs a batch of at least 2")
        mean = x2.mean(axis=axes)
        var = x2.var(axis=axes)
        m = p.momentum
        running_mean = m * p.running_mean + (1 - m) * mean
        running_var = m * p.running_var + (1 - m) * var
    elif mode == "infer":
        mean, var = p.running_mean, p.running_var
        running_mean, running_var = p.running_mean, p.running_var
    else:
        raise ConfigurationError(f"batch norm mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x2 - mean) * inv_std
    out = (p.gamma * xhat + p.beta).reshape(X.shape)
    return LayerIO(out, dict(op="batch_norm", out_shape=out.shape, xhat=xhat, inv_std=inv_std,
                             gamma=p.gamma, mode=mode, axes=axes, running_mean=running_mean,
                             running_var=running_var))


def batch_norm_backward(grad, cache: dict) -> tuple[Tensor, dict]:
    grad = as_tensor(grad)
    _check_cache(cache, "batch_norm", grad)
    xhat, inv_std, axes = cache["xhat"], cache["inv_std"], cache["axes"]
    g = grad.reshape(xhat.shape)
    dgamma = (g * xhat).sum(axis=axes)
    dbeta = g.sum(axis=axes)
    dxhat = g * cache["gamma"]
    if cache["mode"] == "train":
        m = xhat.size // xhat.shape[-1]
        dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    else:
        dx = dxhat * inv_std
    return dx.reshape(grad.shape), {"gamma": dgamma, "beta": dbeta}


# ---------------------------------------------------------------- dense & pointwise


def dense(X, weights, bias=None) -> LayerIO:
    X = as_tensor(X)
    W = as_tensor(weights)
    if X.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: input width {X.shape[-1]} != weight rows {W.shape[0]}")
    out = X @ W
    if bias is not None:
        out = out + as_tensor(bias)
    return LayerIO(out, dict(op="dense", out_shape=out.shape, x=X, w=W, has_bias=bias is not None))


def dense_backward(grad, cache: dict) -> tuple[Tensor, dict]:
    grad = as_tensor(grad)
    _check_cache(cache, "dense", grad)
    x, w = cache["x"], cache["w"]
    g2 = grad.reshape(-1, grad.shape[-1])
    grads = {"weights": x.reshape(-1, x.shape[-1]).T @ g2}
    if cache["has_bias"]:
        grads["bias"] = g2.sum(axis=0)
    return grad @ w.T, grads


def relu(X) -> LayerIO:
    X = as_tensor(X)
    out = np.maximum(X, 0.0)
    return LayerIO(out, dict(op="relu", out_shape=out.shape, mask=X > 0))


def relu_backward(grad, cache):
    grad = as_tensor(grad)
    _check_cache(cache, "relu", grad)
    return grad * cache["mask"], {}


def tanh(X) -> LayerIO:
    out = np.tanh(as_tensor(X))
    return LayerIO(out, dict(op="tanh", out_shape=out.shape, y=out))


def tanh_backward(grad, cache):
    grad = as_tensor(grad)
    _check_cache(cache, "tanh", grad)
    return grad * (1.0 - cache["y"] ** 2), {}


def softmax(X) -> LayerIO:
    X = as_tensor(X)
    e = np.exp(X - X.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    return LayerIO(out, dict(op="softmax", out_shape=out.shape, y=out))


def softmax_backward(grad, cache):
    grad = as_tensor(grad)
    _check_cache(cache, "softmax", grad)
    y = cache["y"]
    return y * (grad - (grad * y).sum(axis=-1, keepdims=True)), {}


def dropout(X, rate: float, rng: Rng | None, mode: str = "train") -> LayerIO:
    """Inverted dropout: kept units are divided by the keep probability."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    X = as_tensor(X)
    if mode == "infer" or rate == 0.0:
        mask = np.ones_like(X)
    else:
        if rng is None:
            raise ContractError("dropout in train mode needs an Rng")
        mask = (rng.random(X.shape) >= rate) / (1.0 - rate)
    out = X * mask
    return LayerIO(out, dict(op="dropout", out_shape=out.shape, mask=mask))


def dropout_backward(grad, cache):
    grad = as_tensor(grad)
    _check_cache(cache, "dropout", grad)
    return grad * cache["mask"], {}


# ---------------------------------------------------------------- layer objects

_tokens = itertools.count(1)


def glorot_uniform(rng: Rng, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit)


class Layer:
    """Stateful wrapper: owns parameters and checks that caches come back to it."""

    kind = ""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, Tensor] = {}
        self.token = next(_tokens)

    def forward(self, x: Tensor, train: bool = False) -> LayerIO:
        io = self._forward(x, train)
        io.cache["owner"] = self.token
        return io

    def backward(self, grad: Tensor, cache: dict) -> tuple[Tensor, dict]:
        if cache.get("owner") != self.token:
            raise ContractError(f"{self.kind} layer received a cache produced by another layer")
        return self._backward(grad, cache)

    def _forward(self, x, train):
        raise NotImplementedError

    def _backward(self, grad, cache):
        raise NotImplementedError


def layer_backward(layer: Layer, grad: Tensor, cache: dict) -> tuple[Tensor, dict]:
    return layer.backward(grad, cache)


class Conv1D(Layer):
    kind = "conv"

    def __init__(self, in_channels, filters, size, stride=1, padding="valid", rng=None, bias=True):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.params["weight"] = (
            glorot_uniform(rng, (filters, size, in_channels), size * in_channels, size * filters)
            if rng is not None else np.zeros((filters, size, in_channels))
        )
        if bias:
            self.params["bias"] = np.zeros(filters)

    def conv_params(self) -> ConvParams:
        return ConvParams(self.params["weight"], self.params.get("bias"), self.stride, self.padding)

    def _forward(self, x, train):
        return convolve(x, self.conv_params())

    def _backward(self, grad, cache):
        dx, g = convolve_backward(grad, cache)
        out = {"weight": g["filters"]}
        if "bias" in g:
            out["bias"] = g["bias"]
        return dx, out


class Kerv1D(Conv1D):
    kind = "kerv"

    def __init__(self, in_channels, filters, size, kernel: KernelSpec, stride=1, padding="valid",
                 rng=None, name="kerv"):
        super().__init__(in_channels, filters, size, stride, padding, rng, bias=False)
        self.kernel = kernel
        self.name = name

    def _forward(self, x, train):
        return kervolve(x, self.conv_params(), self.kernel, name=self.name)

    def _backward(self, grad, cache):
        dx, g = kervolve_backward(grad, cache)
        return dx, {"weight": g["filters"]}


class ConvTranspose1D(Layer):
    kind = "tconv"

    def __init__(self, in_channels, filters, size, stride=1, padding="same", rng=None):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.params["weight"] = (
            glorot_uniform(rng, (in_channels, size, filters), size * in_channels, size * filters)
            if rng is not None else np.zeros((in_channels, size, filters))
        )
        self.params["bias"] = np.zeros(filters)

    def _forward(self, x, train):
        p = ConvParams(self.params["weight"], self.params["bias"], self.stride, self.padding)
        return transposed_convolve(x, p)

    def _backward(self, grad, cache):
        dx, g = transposed_convolve_backward(grad, cache)
        return dx, {"weight": g["filters"], "bias": g["bias"]}


class MaxPool1D(Layer):
    kind = "maxpool"

    def __init__(self, size, stride=None):
        super().__init__()
        self.size, self.stride = size, stride or size

    def _forward(self, x, train):
        return max_pool(x, self.size, self.stride)

    def _backward(self, grad, cache):
        return max_pool_backward(grad, cache)


class Upsample1D(Layer):
    kind = "upsample"

    def __init__(self, factor):
        super().__init__()
        self.factor = factor

    def _forward(self, x, train):
        return upsample_nearest(x, self.factor)

    def _backward(self, grad, cache):
        return upsample_backward(grad, cache)


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels, epsilon=1e-5, momentum=0.9):
        super().__init__()
        self.epsilon, self.momentum = epsilon, momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def bn_params(self) -> BatchNormParams:
        return BatchNormParams(self.params["gamma"], self.params["beta"],
                               self.buffers["running_mean"], self.buffers["running_var"],
                               self.epsilon, self.momentum)

    def _forward(self, x, train):
        io = batch_norm(x, self.bn_params(), "train" if train else "infer")
        if train:
            self.buffers["running_mean"] = io.cache["running_mean"]
            self.buffers["running_var"] = io.cache["running_var"]
        return io

    def _backward(self, grad, cache):
        return batch_norm_backward(grad, cache)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, units, rng=None):
        super().__init__()
        self.params["weight"] = (
            glorot_uniform(rng, (in_features, units), in_features, units)
            if rng is not None else np.zeros((in_features, units))
        )
        self.params["bias"] = np.zeros(units)

    def _forward(self, x, train):
        return dense(x, self.params["weight"], self.params["bias"])

    def _backward(self, grad, cache):
        dx, g = dense_backward(grad, cache)
        return dx, {"weight": g["weights"], "bias": g["bias"]}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate, rng: Rng | None = None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate, self.rng = rate, rng

    def _forward(self, x, train):
        return dropout(x, self.rate, self.rng, "train" if train else "infer")

    def _backward(self, grad, cache):
        return dropout_backward(grad, cache)


class _Pointwise(Layer):
    fwd = bwd = None

    def _forward(self, x, train):
        return type(self).fwd(x)

    def _backward(self, grad, cache):
        return type(self).bwd(grad, cache)


class ReLU(_Pointwise):
    kind = "relu"
    fwd, bwd = staticmethod(relu), staticmethod(relu_backward)


class Tanh(_Pointwise):
    kind = "tanh"
    fwd, bwd = staticmethod(tanh), staticmethod(tanh_backward)


class Softmax(_Pointwise):
    kind = "softmax"
    fwd, bwd = staticmethod(softmax), staticmethod(softmax_backward)


class Flatten(Layer):
    kind = "flatten"

    def _forward(self, x, train):
        out = x.reshape(x.shape[0], -1)
        return LayerIO(out, dict(op="flatten", out_shape=out.shape, x_shape=x.shape))

    def _backward(self, grad, cache):
        _check_cache(cache, "flatten", grad)
        return grad.reshape(cache["x_shape"]), {}


class Reshape(Layer):
    """Reshape every batch item to ``shape``."""

    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def _forward(self, x, train):
        out = x.reshape((x.shape[0],) + self.shape)
        return LayerIO(out, dict(op="reshape", out_shape=out.shape, x_shape=x.shape))

    def _backward(self, grad, cache):
        _check_cache(cache, "reshape", grad)
        return grad.reshape(cache["x_shape"]), {}
