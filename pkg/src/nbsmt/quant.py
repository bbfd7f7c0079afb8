"""Post-training 8-bit quantization: calibration, kernels, persistence.

Activations: unsigned per-layer affine, q = clamp(round(a/s) + zp, 0, 255)
with ties rounded up. Weights: symmetric signed per-output-channel,
q = clamp(round(w/s), -127, 127) with ties away from zero (note -128 is
never produced). Calibration observes plain min/max of each weight layer's
float input over a subset, clamping the minimum to zero where the input
comes through a ReLU (possibly via pooling), which pins the zero-point of
those layers to 0.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCALE_FLOOR = 1e-8


class QuantError(ValueError):
    pass


def round_half_up(x):
    return np.floor(x + 0.5)


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class QTensor:
    """Quantized tensor plus the affine map back to floats."""

    data: np.ndarray  # uint8 activations or int8 weights
    scale: object  # float, or per-output-channel array for weights
    zero_point: int = 0

    def dequantize(self):
        scale = np.asarray(self.scale, dtype=np.float64)
        if scale.ndim:
            scale = scale.reshape((-1,) + (1,) * (self.data.ndim - 1))
        out = scale * (self.data.astype(np.float64) - self.zero_point)
        return out.astype(np.float32)


@dataclass
class LayerQuant:
    """Quantization constants for one conv/fc layer."""

    act_scale: float
    act_zero_point: int
    weight_scales: np.ndarray  # (out_channels,) float64

    def __post_init__(self):
        if self.act_scale <= 0:
            raise QuantError(f"act_scale must be positive, got {self.act_scale}")
        if not 0 <= self.act_zero_point <= 255:
            raise QuantError(f"zero_point {self.act_zero_point} outside [0, 255]")
        self.weight_scales = np.asarray(self.weight_scales, dtype=np.float64)
        if (self.weight_scales <= 0).any():
            raise QuantError("weight scales must be positive")


@dataclass
class QuantParams:
    """Per-layer quantization constants, keyed by layer name."""

    layers: dict = field(default_factory=dict)

    def for_layer(self, name):
        if name not in self.layers:
            raise QuantError(f"no quantization constants for layer {name!r}")
        return self.layers[name]


def quantize_weights(w, scales):
    """Symmetric per-output-channel signed quantization to int8."""
    w = np.asarray(w, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64).reshape((-1,) + (1,) * (w.ndim - 1))
    q = round_half_away(w / scales)
    q = np.clip(q, -127, 127).astype(np.int8)
    return QTensor(data=q, scale=scales.reshape(-1), zero_point=0)


def quantize_activations(a, act_scale, act_zero_point=0):
    """Unsigned per-layer affine quantization to uint8, ties up."""
    if act_scale <= 0:
        raise QuantError(f"act_scale must be positive, got {act_scale}")
    q = round_half_up(np.asarray(a, dtype=np.float64) / act_scale) + act_zero_point
    q = np.clip(q, 0, 255).astype(np.uint8)
    return QTensor(data=q, scale=float(act_scale), zero_point=int(act_zero_point))


def dequantize(q):
    return q.dequantize()


def act_range_to_params(lo, hi):
    """Scale and zero-point covering the observed float range [lo, hi]."""
    scale = max((hi - lo) / 255.0, SCALE_FLOOR)
    zp = int(np.clip(round_half_up(-lo / scale), 0, 255))
    return scale, zp


def weight_scales_for(w):
    """Per-output-channel |w|max / 127, floored for dead channels."""
    w = np.asarray(w, dtype=np.float64)
    peak = np.abs(w).reshape(w.shape[0], -1).max(axis=1)
    return np.maximum(peak / 127.0, SCALE_FLOOR)


def _relu_feeds(graph, layer_name):
    """True when `layer_name`'s input comes from a ReLU, pools in between."""
    prev_kind = None
    for layer in graph.layers:
        if layer.name == layer_name:
            return prev_kind == "relu"
        if layer.kind != "maxpool":
            prev_kind = layer.kind
    raise KeyError(layer_name)


def calibrate(graph, subset, batch_size=256):
    """Observe activation ranges on a float forward pass; derive QuantParams.

    Deterministic in (graph, subset order): ranges are plain min/max
    reductions over every batch, so batch splitting cannot change them.
    """
    from nbsmt.engine import ExecutionMode, forward

    if len(subset) == 0:
        raise QuantError("calibration subset is empty")
    names = [l.name for l in graph.weight_layers()]
    lo = {n: np.inf for n in names}
    hi = {n: -np.inf for n in names}
    mode = ExecutionMode.float32()
    for start in range(0, len(subset), batch_size):
        batch = subset.images[start : start + batch_size]
        result = forward(graph, None, batch, mode, collect_taps=names)
        for n in names:
            tap = result.taps[n]
            lo[n] = min(lo[n], float(tap.min()))
            hi[n] = max(hi[n], float(tap.max()))

    params = {}
    for layer in graph.weight_layers():
        n = layer.name
        low = 0.0 if _relu_feeds(graph, n) else lo[n]
        scale, zp = act_range_to_params(low, hi[n])
        params[n] = LayerQuant(
            act_scale=scale,
            act_zero_point=zp,
            weight_scales=weight_scales_for(layer.weight),
        )
    return QuantParams(layers=params)


def save_qparams(qparams, path):
    doc = {
        "layers": {
            name: {
                "act_scale": lq.act_scale,
                "act_zero_point": lq.act_zero_point,
                "weight_scales": lq.weight_scales.tolist(),
            }
            for name, lq in qparams.layers.items()
        }
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")


def load_qparams(path):
    doc = json.loads(Path(path).read_text("utf-8"))
    layers = {
        name: LayerQuant(
            act_scale=entry["act_scale"],
            act_zero_point=entry["act_zero_point"],
            weight_scales=np.array(entry["weight_scales"], dtype=np.float64),
        )
        for name, entry in doc["layers"].items()
    }
    return QuantParams(layers=layers)
