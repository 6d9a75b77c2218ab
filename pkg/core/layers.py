# core/layers.py → Layer Specs & Parameter Containers
# Role: Turns declarative LayerSpec entries into parameterised layers over DiffArray ops.

# Parameters are named "<network>.<index>.<param>" so they flatten directly into the
# model container written by core/session.py.

# core/layers.py

from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, model_validator

from core import tensor as T
from core.errors import ConfigError, ShapeError
from core.tensor import DiffArray

LayerKind = Literal[
    "dense", "conv1d", "upsample_conv1d", "maxpool1d", "groupnorm",
    "dropout", "relu", "leaky_relu", "sigmoid", "embedding",
]
Mode = Literal["train", "eval"]


class LayerSpec(BaseModel):
    kind: LayerKind
    in_features: int = 0
    units: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 3
    stride: int = 1
    groups: int = 1
    channels: int = 0
    p: float = 0.0
    num_embeddings: int = 0
    embedding_dim: int = 0
    negative_slope: float = 0.2
    init: Literal["he", "xavier", "zeros"] = "he"

    @model_validator(mode="after")
    def check_sizes(self):
        if self.kind == "dense" and (self.in_features < 1 or self.units < 1):
            raise ConfigError(f"dense layer needs in_features and units >= 1, got {self.in_features}, {self.units}")
        if self.kind in ("conv1d", "upsample_conv1d"):
            if self.in_channels < 1 or self.out_channels < 1 or self.kernel_size < 1 or self.stride < 1:
                raise ConfigError(f"{self.kind} needs positive channels, kernel_size and stride")
        if self.kind == "groupnorm" and (self.channels < 1 or self.groups < 1 or self.channels % self.groups):
            raise ConfigError(f"groupnorm: channels ({self.channels}) must be divisible by groups ({self.groups})")
        if self.kind == "dropout" and not 0.0 <= self.p < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {self.p}")
        if self.kind == "embedding" and (self.num_embeddings < 1 or self.embedding_dim < 1):
            raise ConfigError("embedding needs num_embeddings and embedding_dim >= 1")
        return self


def init_weight(shape, fan_in: int, fan_out: int, scheme: str, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Uniform He (ReLU layers) or Xavier (sigmoid outputs); zeros on request."""
    if scheme == "zeros" or rng is None:
        return np.zeros(shape)
    if scheme == "xavier":
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    else:
        limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    def __init__(self, spec: LayerSpec, rng: Optional[np.random.Generator] = None, name: str = "layer"):
        self.spec = spec
        self.name = name
        self.params: Dict[str, DiffArray] = {}
        s = spec
        if s.kind == "dense":
            self.params["weight"] = T.parameter(init_weight((s.in_features, s.units), s.in_features, s.units, s.init, rng))
            self.params["bias"] = T.parameter(np.zeros(s.units))
        elif s.kind in ("conv1d", "upsample_conv1d"):
            fan_in, fan_out = s.in_channels * s.kernel_size, s.out_channels * s.kernel_size
            shape = (s.out_channels, s.in_channels, s.kernel_size)
            self.params["weight"] = T.parameter(init_weight(shape, fan_in, fan_out, s.init, rng))
            self.params["bias"] = T.parameter(np.zeros(s.out_channels))
        elif s.kind == "groupnorm":
            self.params["gamma"] = T.parameter(np.ones(s.channels))
            self.params["beta"] = T.parameter(np.zeros(s.channels))
        elif s.kind == "embedding":
            shape = (s.num_embeddings, s.embedding_dim)
            self.params["table"] = T.parameter(init_weight(shape, s.num_embeddings, s.embedding_dim, "xavier" if s.init != "zeros" else "zeros", rng))

    def forward(self, x, mode: Mode = "train", rng: Optional[np.random.Generator] = None) -> DiffArray:
        s = self.spec
        if s.kind == "embedding":
            return T.embedding_lookup(self.params["table"], x)
        x = T.as_array(x)
        if s.kind == "dense":
            if x.ndim != 2 or x.shape[1] != s.in_features:
                raise ShapeError(f"{self.name}: dense expects (N, {s.in_features}), got {x.shape}")
            return x @ self.params["weight"] + self.params["bias"]
        if s.kind in ("conv1d", "upsample_conv1d"):
            if x.ndim != 3 or x.shape[1] != s.in_channels:
                raise ShapeError(f"{self.name}: {s.kind} expects (N, {s.in_channels}, L), got {x.shape}")
            if s.kind == "upsample_conv1d":
                x = T.upsample_nearest(x, 2)
            return T.conv1d(x, self.params["weight"], self.params["bias"], stride=s.stride)
        if s.kind == "maxpool1d":
            if x.ndim != 3:
                raise ShapeError(f"{self.name}: maxpool1d expects (N, C, L), got {x.shape}")
            return T.maxpool1d(x)
        if s.kind == "groupnorm":
            if x.ndim != 3 or x.shape[1] != s.channels:
                raise ShapeError(f"{self.name}: groupnorm expects (N, {s.channels}, L), got {x.shape}")
            return T.group_norm(x, s.groups, self.params["gamma"], self.params["beta"])
        if s.kind == "dropout":
            return T.dropout(x, s.p, rng, train=(mode == "train"))
        if s.kind == "relu":
            return T.relu(x)
        if s.kind == "leaky_relu":
            return T.leaky_relu(x, s.negative_slope)
        if s.kind == "sigmoid":
            return T.sigmoid(x)
        raise ConfigError(f"Unsupported layer kind: {s.kind}")

    __call__ = forward

    def named_parameters(self) -> Dict[str, DiffArray]:
        return {f"{self.name}.{key}": value for key, value in self.params.items()}


def forward(layer: Layer, x, mode: Mode = "train", rng: Optional[np.random.Generator] = None) -> DiffArray:
    return layer.forward(x, mode, rng)


class Sequential:
    def __init__(self, specs: List[LayerSpec], rng: Optional[np.random.Generator] = None, name: str = "net"):
        self.name = name
        self.layers = [Layer(spec, rng, f"{name}.{i}") for i, spec in enumerate(specs)]

    def __call__(self, x, mode: Mode = "train", rng: Optional[np.random.Generator] = None) -> DiffArray:
        for layer in self.layers:
            x = forward(layer, x, mode, rng)
        return x

    def named_parameters(self) -> Dict[str, DiffArray]:
        out: Dict[str, DiffArray] = {}
        for layer in self.layers:
            out.update(layer.named_parameters())
        return out


def dense(in_features: int, units: int, init: str = "he") -> LayerSpec:
    return LayerSpec(kind="dense", in_features=in_features, units=units, init=init)


def conv(in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
         init: str = "he", upsample: bool = False) -> LayerSpec:
    return LayerSpec(kind="upsample_conv1d" if upsample else "conv1d", in_channels=in_channels,
                     out_channels=out_channels, kernel_size=kernel_size, stride=stride, init=init)


def act(kind: str, **kwargs) -> LayerSpec:
    return LayerSpec(kind=kind, **kwargs)


# --- parameter sets ---------------------------------------------------------

def zero_grad(params: Dict[str, DiffArray]) -> None:
    for p in params.values():
        p.grad = None


def gradients(params: Dict[str, DiffArray]) -> Dict[str, np.ndarray]:
    return {name: p.grad_or_zeros() for name, p in params.items()}


def snapshot(params: Dict[str, DiffArray]) -> Dict[str, np.ndarray]:
    return {name: p.value.copy() for name, p in params.items()}


def restore(params: Dict[str, DiffArray], values: Dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        p.value = values[name].copy()


def load_values(params: Dict[str, DiffArray], values: Dict[str, np.ndarray]) -> None:
    missing = sorted(set(params) - set(values))
    if missing:
        raise ShapeError(f"Model file lacks parameters: {missing[:5]}")
    for name, p in params.items():
        v = np.asarray(values[name], dtype=np.float64)
        if v.shape != p.value.shape:
            raise ShapeError(f"Parameter {name}: stored shape {v.shape} != model shape {p.value.shape}")
        p.value = v.copy()


def count_parameters(params: Dict[str, DiffArray]) -> int:
    return int(sum(p.size for p in params.values()))
