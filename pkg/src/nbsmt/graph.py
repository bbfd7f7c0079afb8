"""Layer graph: an ordered CNN as plain arrays, plus structural validation.

Layers are small dataclasses in a flat list (conv, batchnorm, relu,
maxpool, fc). Graphs are treated as immutable after load; passes that
change weights or statistics (pruning, recalibration) work on a copy.
"""

import copy
from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    pass


@dataclass
class Conv2d:
    name: str
    weight: np.ndarray  # (out_ch, in_ch, kh, kw) float32
    bias: np.ndarray  # (out_ch,) float32
    stride: int = 1
    padding: int = 0
    nbsmt_exempt: bool = False
    kind = "conv2d"


@dataclass
class BatchNorm:
    name: str
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    kind = "batchnorm"


@dataclass
class ReLU:
    name: str
    kind = "relu"


@dataclass
class MaxPool:
    name: str
    kernel: int = 2
    stride: int = 2
    kind = "maxpool"


@dataclass
class FullyConnected:
    name: str
    weight: np.ndarray  # (out_features, in_features) float32
    bias: np.ndarray
    nbsmt_exempt: bool = True
    kind = "fc"


WEIGHT_KINDS = ("conv2d", "fc")


@dataclass
class LayerGraph:
    layers: list
    input_norm: dict = field(default_factory=lambda: {"mean": [0.0], "std": [1.0]})
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(names) != len(set(names)):
            raise GraphError("duplicate layer names")

    def layer(self, name):
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def weight_layers(self):
        return [l for l in self.layers if l.kind in WEIGHT_KINDS]

    def eligible_layers(self):
        """Names of conv layers that may run multi-threaded."""
        return [l.name for l in self.layers if l.kind == "conv2d" and not l.nbsmt_exempt]

    def copy(self):
        return copy.deepcopy(self)

    def validate(self, input_shape=None):
        """Check structural invariants; with input_shape (C, H, W), check the
        full forward shape chain including the flatten into the first FC."""
        channels = None
        for i, l in enumerate(self.layers):
            if l.kind == "conv2d":
                _require(l.weight.ndim == 4, i, l, "conv weight must be 4-d")
                _require(l.bias.shape == (l.weight.shape[0],), i, l, "bias/out_ch mismatch")
                _require(l.stride >= 1 and l.padding >= 0, i, l, "bad stride/padding")
                if channels is not None:
                    _require(
                        l.weight.shape[1] == channels,
                        i,
                        l,
                        f"expects {l.weight.shape[1]} input channels, got {channels}",
                    )
                channels = l.weight.shape[0]
            elif l.kind == "batchnorm":
                n = l.gamma.shape[0]
                for vec_name in ("beta", "running_mean", "running_var"):
                    _require(getattr(l, vec_name).shape == (n,), i, l,
                             f"{vec_name} length != {n}")
                if channels is not None:
                    _require(channels == n, i, l, f"channel extent {n} != {channels}")
                _require(l.eps > 0, i, l, "eps must be positive")
                _require((l.running_var >= 0).all(), i, l, "negative running variance")
                _require(0 <= l.momentum <= 1, i, l, "momentum outside [0, 1]")
            elif l.kind == "fc":
                _require(l.weight.ndim == 2, i, l, "fc weight must be 2-d")
                _require(l.bias.shape == (l.weight.shape[0],), i, l, "bias/out mismatch")
            elif l.kind == "maxpool":
                _require(l.kernel >= 1 and l.stride >= 1, i, l, "bad pool geometry")
            for arr_name in ("weight", "bias", "gamma", "beta", "running_mean", "running_var"):
                arr = getattr(l, arr_name, None)
                if arr is not None:
                    _require(np.isfinite(arr).all(), i, l, f"non-finite values in {arr_name}")

        for i, l in enumerate(self.layers):
            if l.kind == "conv2d":
                _require(l.nbsmt_exempt, i, l, "first conv must be exempt")
                break
        for i, l in enumerate(self.layers):
            if l.kind == "fc":
                _require(l.nbsmt_exempt, i, l, "fc layers must be exempt")

        if input_shape is not None:
            self._check_shapes(input_shape)
        return self

    def _check_shapes(self, input_shape):
        c, h, w = input_shape
        flat = None
        for i, l in enumerate(self.layers):
            if l.kind == "conv2d":
                _require(l.weight.shape[1] == c, i, l,
                         f"expects {l.weight.shape[1]} channels, input has {c}")
                kh, kw = l.weight.shape[2:]
                h = (h + 2 * l.padding - kh) // l.stride + 1
                w = (w + 2 * l.padding - kw) // l.stride + 1
                _require(h >= 1 and w >= 1, i, l, "spatial extent vanished")
                c = l.weight.shape[0]
            elif l.kind == "maxpool":
                h //= l.stride
                w //= l.stride
                _require(h >= 1 and w >= 1, i, l, "spatial extent vanished")
            elif l.kind == "fc":
                flat = flat if flat is not None else c * h * w
                _require(l.weight.shape[1] == flat, i, l,
                         f"fc expects {l.weight.shape[1]} features, got {flat}")
                flat = l.weight.shape[0]


def _require(cond, index, layer, msg):
    if not cond:
        raise GraphError(f"layer {index} ({layer.name}): {msg}")


def apply_default_exemptions(graph):
    """Mark the first conv and every fc layer exempt, in place."""
    first = True
    for l in graph.layers:
        if l.kind == "conv2d" and first:
            l.nbsmt_exempt = True
            first = False
        elif l.kind == "fc":
            l.nbsmt_exempt = True
    return graph
