"""Unstructured magnitude pruning and sparsity measurement.

Zeroing small weights raises operand sparsity, which directly lowers the
collision rate of threaded execution (a zero weight deactivates its
thread), trading model capacity for cleaner acceleration.
"""

import math

import numpy as np

from nbsmt.quant import quantize_weights


def magnitude_prune(graph, sparsity, layer_names=None):
    """Zero the ceil(sparsity * n) smallest-|w| weights of each layer.

    Applies to the accelerable conv layers unless `layer_names` says
    otherwise. Ties in |w| break by flat index order (stable), so the
    result is deterministic and pruning at the same sparsity twice is a
    no-op the second time.
    """
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity {sparsity} outside [0, 1)")
    names = graph.eligible_layers() if layer_names is None else list(layer_names)
    out = graph.copy()
    for name in names:
        layer = out.layer(name)
        flat = layer.weight.reshape(-1)
        k = math.ceil(sparsity * flat.size)
        if k == 0:
            continue
        order = np.argsort(np.abs(flat), kind="stable")
        flat[order[:k]] = 0.0
    return out


def sparsity_report(graph, qparams=None):
    """Per weight layer: zero fraction of float weights (and of their int8
    image when quantization constants are given)."""
    report = {}
    for layer in graph.weight_layers():
        entry = {"float_zero_fraction": float(np.mean(layer.weight == 0.0))}
        if qparams is not None:
            lq = qparams.for_layer(layer.name)
            q = quantize_weights(layer.weight, lq.weight_scales)
            entry["quant_zero_fraction"] = float(np.mean(q.data == 0))
        report[layer.name] = entry
    return report


def activation_sparsity(graph, qparams, batch, mode):
    """Zero fraction of each weight layer's quantized input on one batch."""
    from nbsmt.engine import forward
    from nbsmt.quant import quantize_activations

    names = [l.name for l in graph.weight_layers()]
    result = forward(graph, qparams, batch, mode, collect_taps=names)
    out = {}
    for name in names:
        lq = qparams.for_layer(name)
        q = quantize_activations(result.taps[name], lq.act_scale, lq.act_zero_point)
        out[name] = float(np.mean(q.data == lq.act_zero_point))
    return out
