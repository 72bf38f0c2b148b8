"""Declarative model specs, the reference architectures, and the conv/kerv variant grid."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import ConfigurationError, ShapeError
from .tensor import Rng

POINTWISE = ("relu", "tanh", "softmax", "dropout", "batchnorm")
ACTIVATIONS = ("relu", "tanh")
HELICOPTER_VARIANTS = ("CNN", "KCNN-d3", "KCNN-d2", "KCNN-Kp&BN", "KCNN-Kp")


@dataclass
class LayerDesc:
    kind: str
    opts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.opts}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerDesc":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, d)


def conv(filters, size, stride=1, padding="same"):
    return LayerDesc("conv", dict(filters=filters, size=size, stride=stride, padding=padding))


def kerv(filters, size, stride=1, padding="same", degree=2, cp=1.0, kp=1.0):
    """``kp="card"`` resolves to the window cardinality (size * in_channels)."""
    return LayerDesc("kerv", dict(filters=filters, size=size, stride=stride, padding=padding,
                                  degree=degree, cp=cp, kp=kp))


def tconv(filters, size, stride=1, padding="same"):
    return LayerDesc("tconv", dict(filters=filters, size=size, stride=stride, padding=padding))


def maxpool(size, stride=None):
    return LayerDesc("maxpool", dict(size=size, stride=stride or size))


def upsample(factor):
    return LayerDesc("upsample", dict(factor=factor))


def dense(units):
    return LayerDesc("dense", dict(units=units))


def dropout(rate):
    return LayerDesc("dropout", dict(rate=rate))


def reshape(*shape):
    return LayerDesc("reshape", dict(shape=list(shape)))


def simple(kind):
    return LayerDesc(kind, {})


@dataclass
class ModelSpec:
    """Ordered layer descriptors for inputs of per-item shape ``input_shape``.

    Equality is structural: ``name`` and ``metadata`` do not take part.
    """

    input_shape: tuple
    layers: list
    name: str = field(default="model", compare=False)
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.layers = list(self.layers)

    def shapes(self) -> list[tuple]:
        """Per-item shapes after each layer; raises ShapeError when they do not chain."""
        shape = self.input_shape
        out = []
        for i, desc in enumerate(self.layers):
            try:
                shape = _out_shape(desc, shape)
            except ConfigurationError as exc:
                raise ShapeError(f"{self.name}: layer {i} ({desc.kind}): {exc}") from exc
            out.append(shape)
        return out

    @property
    def output_shape(self) -> tuple:
        shapes = self.shapes()
        return shapes[-1] if shapes else self.input_shape

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [d.to_dict() for d in self.layers],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(d["input_shape"]), [LayerDesc.from_dict(x) for x in d["layers"]],
                   d.get("name", "model"), dict(d.get("metadata", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def table(self) -> str:
        rows = [("#", "layer", "options", "output", "params")]
        shape = self.input_shape
        for i, (desc, out) in enumerate(zip(self.layers, self.shapes())):
            opts = ", ".join(f"{k}={v}" for k, v in desc.opts.items())
            rows.append((str(i), desc.kind, opts, "x".join(map(str, out)),
                         str(_param_count(desc, shape))))
            shape = out
        widths = [max(len(r[c]) for r in rows) for c in range(5)]
        lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"total parameters: {count_parameters(self)}")
        return "\n".join(lines)


def _resolve_kp(opts: dict, in_channels: int) -> float:
    kp = opts.get("kp", 1.0)
    if kp == "card":
        return float(opts["size"] * in_channels)
    return float(kp)


def _out_shape(desc: LayerDesc, shape: tuple) -> tuple:
    k, o = desc.kind, desc.opts
    if k in ("conv", "kerv", "tconv", "maxpool", "upsample") and len(shape) != 2:
        raise ConfigurationError(f"expects a (time, channels) input, got {shape}")
    if k in ("conv", "kerv"):
        out, _, _ = L.conv_geometry(shape[0], o["size"], o["stride"], o["padding"])
        return (out, o["filters"])
    if k == "tconv":
        return (L.transposed_length(shape[0], o["size"], o["stride"], o["padding"]), o["filters"])
    if k == "maxpool":
        if o["size"] > shape[0]:
            raise ConfigurationError(f"pool window {o['size']} exceeds input extent {shape[0]}")
        return ((shape[0] - o["size"]) // o["stride"] + 1, shape[1])
    if k == "upsample":
        return (shape[0] * o["factor"], shape[1])
    if k in POINTWISE:
        return shape
    if k == "flatten":
        return (math.prod(shape),)
    if k == "dense":
        if len(shape) != 1:
            raise ConfigurationError(f"dense expects a flat input, got {shape}")
        return (o["units"],)
    if k == "reshape":
        target = tuple(o["shape"])
        if math.prod(target) != math.prod(shape):
            raise ConfigurationError(f"cannot reshape {shape} to {target}")
        return target
    raise ConfigurationError(f"unknown layer kind {k!r}")


def _param_count(desc: LayerDesc, shape: tuple) -> int:
    o = desc.opts
    if desc.kind == "conv":
        return o["filters"] * o["size"] * shape[-1] + o["filters"]
    if desc.kind == "kerv":
        return o["filters"] * o["size"] * shape[-1]
    if desc.kind == "tconv":
        return shape[-1] * o["size"] * o["filters"] + o["filters"]
    if desc.kind == "dense":
        return shape[0] * o["units"] + o["units"]
    if desc.kind == "batchnorm":
        return 2 * shape[-1]
    return 0


def count_parameters(spec: ModelSpec) -> int:
    shapes = [spec.input_shape] + spec.shapes()
    return sum(_param_count(d, s) for d, s in zip(spec.layers, shapes))


# ---------------------------------------------------------------- runtime model


class Model:
    """Instantiated layer stack with forward, backward and state snapshots."""

    def __init__(self, spec: ModelSpec, layers: list):
        self.spec = spec
        self.layers = layers
        self.extra: dict = {}
        self._caches: list | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        caches = []
        for layer in self.layers:
            io = layer.forward(x, train)
            caches.append(io.cache)
            x = io.output
        self._caches = caches
        return x

    def backward(self, grad: np.ndarray) -> dict:
        """Parameter gradients keyed like :meth:`parameters`; consumes the last forward's caches."""
        return self.backward_from(len(self.layers) - 1, grad)

    def backward_from(self, last: int, grad: np.ndarray) -> dict:
        """Backpropagate ``grad`` (w.r.t. the output of layer ``last``) down to the input."""
        if self._caches is None:
            raise L.ContractError("backward called without a preceding forward pass")
        grads = {}
        for i in reversed(range(last + 1)):
            grad, pg = self.layers[i].backward(grad, self._caches[i])
            for name, g in pg.items():
                grads[f"{i}.{name}"] = g
        self._caches = None
        return grads

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        outs = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        self._caches = None
        return np.concatenate(outs, axis=0)

    def parameters(self) -> dict:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def buffers(self) -> dict:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.buffers.items()}

    def state_dict(self) -> dict:
        """Copies of every parameter and buffer, in a stable order."""
        state = {f"param:{k}": v.copy() for k, v in self.parameters().items()}
        state.update({f"buffer:{k}": v.copy() for k, v in self.buffers().items()})
        return state

    def load_state_dict(self, state: dict) -> None:
        for key, value in state.items():
            kind, name = key.split(":", 1)
            idx, pname = name.split(".", 1)
            store = self.layers[int(idx)].params if kind == "param" else self.layers[int(idx)].buffers
            if pname not in store or store[pname].shape != value.shape:
                raise ShapeError(f"state entry {key} does not match the model")
            store[pname] = np.array(value, dtype=np.float64)

    def set_dropout_rng(self, rng: Rng) -> None:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, L.Dropout):
                layer.rng = rng.spawn(f"dropout/{i}")


def instantiate(spec: ModelSpec, seed: int = 0) -> Model:
    """Build layers with Glorot-uniform weights and zero biases drawn from ``seed``."""
    root = Rng(seed)
    init = root.spawn("init")
    shapes = [spec.input_shape] + spec.shapes()
    built = []
    for i, (desc, shape) in enumerate(zip(spec.layers, shapes)):
        o = desc.opts
        k = desc.kind
        if k == "conv":
            layer = L.Conv1D(shape[-1], o["filters"], o["size"], o["stride"], o["padding"], rng=init)
        elif k == "kerv":
            kernel = L.KernelSpec(degree=o["degree"], cp=o.get("cp", 1.0),
                                  kp=_resolve_kp(o, shape[-1]))
            layer = L.Kerv1D(shape[-1], o["filters"], o["size"], kernel, o["stride"], o["padding"],
                             rng=init, name=f"layer {i} (kerv d={o['degree']})")
        elif k == "tconv":
            layer = L.ConvTranspose1D(shape[-1], o["filters"], o["size"], o["stride"], o["padding"],
                                      rng=init)
        elif k == "maxpool":
            layer = L.MaxPool1D(o["size"], o["stride"])
        elif k == "upsample":
            layer = L.Upsample1D(o["factor"])
        elif k == "batchnorm":
            layer = L.BatchNorm(shape[-1])
        elif k == "dense":
            layer = L.Dense(shape[0], o["units"], rng=init)
        elif k == "dropout":
            layer = L.Dropout(o["rate"], root.spawn(f"dropout/{i}"))
        elif k == "relu":
            layer = L.ReLU()
        elif k == "tanh":
            layer = L.Tanh()
        elif k == "softmax":
            layer = L.Softmax()
        elif k == "flatten":
            layer = L.Flatten()
        elif k == "reshape":
            layer = L.Reshape(o["shape"])
        else:
            raise ConfigurationError(f"unknown layer kind {k!r}")
        built.append(layer)
    return Model(spec, built)


# ---------------------------------------------------------------- builders

HAR_INPUT = (128, 6)
HAR_CLASSES = 6


def _block(choice: str, filters: int, size: int, stride: int = 1, padding: str = "same",
           activation: str = "relu", **kernel) -> list:
    """One feature-extraction site: conv + activation, or kerv + batch norm."""
    if choice == "conv":
        return [conv(filters, size, stride, padding), simple(activation)]
    if choice.startswith("kerv"):
        degree = int(choice[4:])
        return [kerv(filters, size, stride, padding, degree=degree, **kernel), simple("batchnorm")]
    raise ConfigurationError(f"unknown site choice {choice!r}")


def _har_classifier(name, filters, choices, head) -> ModelSpec:
    layers = []
    for f, choice in zip(filters, choices):
        layers += _block(choice, f, 9) + [maxpool(3)]
    layers += [simple("flatten")] + head
    degrees = [int(c[4:]) if c.startswith("kerv") else None for c in choices]
    return ModelSpec(HAR_INPUT, layers, name, {"degrees": degrees, "conv_padding": "same",
                                               "pool": "floor"})


def build_ronao_cnn() -> ModelSpec:
    head = [dropout(0.8), dense(1000), simple("relu"), dense(HAR_CLASSES), simple("softmax")]
    return _har_classifier("ronao-cnn", (94, 192, 192), ("conv",) * 3, head)


def build_simplified_cnn() -> ModelSpec:
    return _har_classifier("simplified-cnn", (16, 8, 4), ("conv",) * 3,
                           [dense(HAR_CLASSES), simple("softmax")])


def build_mixed_classifier() -> ModelSpec:
    return _har_classifier("mixed", (16, 8, 4), ("kerv2", "conv", "kerv3"),
                           [dense(HAR_CLASSES), simple("softmax")])


def build_har_autoencoder(encoder: str = "conv") -> ModelSpec:
    """One-layer temporal autoencoder for 128x6 HAR windows.

    The 4x6 encoder kernel spans all six channels, so it is a 1-D convolution
    with six input channels; the 8x6 decoder kernel re-expands to six.
    """
    if encoder == "conv":
        enc = [conv(4, 4, 2, "same"), simple("tanh")]
    elif encoder == "kerv-d3":
        enc = [kerv(4, 4, 2, "same", degree=3), simple("batchnorm")]
    else:
        raise ConfigurationError(f"unknown encoder kind {encoder!r}; expected 'conv' or 'kerv-d3'")
    layers = enc + [maxpool(2, 2), upsample(2), tconv(6, 8, 2, "same")]
    return ModelSpec(HAR_INPUT, layers, f"har-ae-{encoder}", {"encoder": encoder})


_HELI_KERNEL = {
    "CNN": None,
    "KCNN-d3": (3, 1.0, True),
    "KCNN-d2": (2, 1.0, True),
    "KCNN-Kp&BN": (3, "card", True),
    "KCNN-Kp": (3, "card", False),
}


def build_helicopter_autoencoder(variant: str = "CNN", input_length: int = 512) -> ModelSpec:
    """Three-block temporal autoencoder with a dense 160-unit bottleneck."""
    if variant not in _HELI_KERNEL:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {HELICOPTER_VARIANTS}")
    kernel = _HELI_KERNEL[variant]
    layers = []
    for filters, size, stride in ((32, 16, 4), (64, 8, 2), (128, 4, 2)):
        if kernel is None:
            layers += [conv(filters, size, stride, "same"), simple("tanh")]
        else:
            degree, kp, bn = kernel
            layers.append(kerv(filters, size, stride, "same", degree=degree, kp=kp))
            if bn:
                layers.append(simple("batchnorm"))
        layers.append(maxpool(2, 2))
    latent_len = input_length // 128
    layers += [
        simple("flatten"), dense(160), simple("tanh"), dense(latent_len * 128), simple("tanh"),
        reshape(latent_len, 128),
        upsample(2), tconv(64, 4, 2), simple("tanh"),
        upsample(2), tconv(32, 8, 2), simple("tanh"),
        upsample(2), tconv(1, 16, 4),
    ]
    return ModelSpec((input_length, 1), layers, f"heli-ae-{variant}", {"variant": variant})


# ---------------------------------------------------------------- variant grid

SITE_CHOICES = ("conv", "kerv2", "kerv3", "kerv4")


@dataclass(frozen=True)
class VariantGrid:
    choices: tuple

    @classmethod
    def uniform(cls, sites: int, options=SITE_CHOICES) -> "VariantGrid":
        return cls(tuple(tuple(options) for _ in range(sites)))

    @property
    def size(self) -> int:
        return math.prod(len(c) for c in self.choices)


def feature_sites(spec: ModelSpec) -> list[tuple[int, int]]:
    """``(start, stop)`` layer ranges of each conv/kerv layer plus its activation or batch norm."""
    sites = []
    for i, d in enumerate(spec.layers):
        if d.kind in ("conv", "kerv"):
            stop = i + 1
            if stop < len(spec.layers) and spec.layers[stop].kind in ACTIVATIONS + ("batchnorm",):
                stop += 1
            sites.append((i, stop))
    return sites


def enumerate_variants(base: ModelSpec, grid: VariantGrid | None = None) -> list[ModelSpec]:
    """Every per-site combination of conv+ReLU and kerv(d)+batch norm, in product order."""
    sites = feature_sites(base)
    if not sites:
        raise ConfigurationError("base spec has no conv or kerv layer")
    grid = grid or VariantGrid.uniform(len(sites))
    if len(grid.choices) != len(sites):
        raise ConfigurationError(f"grid has {len(grid.choices)} sites, spec has {len(sites)}")
    out = []
    for combo in itertools.product(*grid.choices):
        layers, prev = [], 0
        for (start, stop), choice in zip(sites, combo):
            o = base.layers[start].opts
            layers += base.layers[prev:start]
            layers += _block(choice, o["filters"], o["size"], o["stride"], o["padding"])
            prev = stop
        layers += base.layers[prev:]
        meta = dict(base.metadata, variant="-".join(combo),
                    degrees=[int(c[4:]) if c.startswith("kerv") else None for c in combo])
        spec = ModelSpec(base.input_shape, [LayerDesc(d.kind, dict(d.opts)) for d in layers],
                         f"{base.name}[{'-'.join(combo)}]", meta)
        spec.shapes()
        out.append(spec)
    return out


BUILDERS = {
    "ronao-cnn": build_ronao_cnn,
    "simplified-cnn": build_simplified_cnn,
    "mixed": build_mixed_classifier,
}
