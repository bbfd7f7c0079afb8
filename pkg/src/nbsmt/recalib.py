"""Regather BatchNorm running statistics under noisy threaded execution.

Squeezing perturbs conv outputs, so the running mean/variance frozen at
training time stop describing what each BatchNorm actually sees; the fix is
a short statistics-collection run: forward batches in the target threaded
mode with train-style normalization (each batch normalized by its own
statistics) and fold the observed per-batch mean/variance into the running
values with the usual exponential moving average,

    running <- (1 - m) * running + m * batch_stat

using the unbiased batch variance. No gradients, no labels; weights and
the learned gamma/beta are untouched. EMA accumulation happens in float64
across the whole pass with a single cast back to float32 at the end.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nbsmt.engine import ArrayConfig, forward
from nbsmt.graph import GraphError


@dataclass
class RecalibPlan:
    """What to run: image source, batching, EMA momentum, execution mode."""

    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]; labels never enter
    mode: object  # ExecutionMode, normally nbsmt with the target config
    batch_size: int = 64
    num_batches: int = 100
    momentum: float = 0.1

    def __post_init__(self):
        if len(self.images) == 0:
            raise ValueError("recalibration needs a nonempty image source")
        if not 0.0 < self.momentum <= 1.0:
            raise ValueError(f"momentum {self.momentum} outside (0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch statistics need at least 2 values per channel")

    def batches(self):
        """Sequential batches, wrapping around when the source runs out."""
        n = len(self.images)
        for b in range(self.num_batches):
            idx = [(b * self.batch_size + i) % n for i in range(self.batch_size)]
            yield self.images[idx]


def recalibrate(graph, qparams, plan, array=ArrayConfig(), log_path=None):
    """Return a copy of `graph` with updated BN running statistics.

    Deterministic in (graph, qparams, plan): batches are processed in plan
    order and the EMA update is applied after each one.
    """
    bn_names = [l.name for l in graph.layers if l.kind == "batchnorm"]
    if not bn_names:
        raise GraphError("graph has no BatchNorm layers to recalibrate")

    out = graph.copy()
    mean = {}
    var = {}
    for name in bn_names:
        layer = out.layer(name)
        mean[name] = layer.running_mean.astype(np.float64)
        var[name] = layer.running_var.astype(np.float64)

    m = plan.momentum
    log = []
    for b, batch in enumerate(plan.batches()):
        result = forward(out, qparams, batch, plan.mode, array, bn_batch_stats=True)
        for name in bn_names:
            stats = result.bn_stats[name]
            mean[name] = (1.0 - m) * mean[name] + m * stats["mean"]
            var[name] = (1.0 - m) * var[name] + m * stats["var"]
        if log_path is not None:
            log.append(
                {
                    "batch": b,
                    "layers": {
                        name: {
                            "running_mean": mean[name].tolist(),
                            "running_var": var[name].tolist(),
                        }
                        for name in bn_names
                    },
                }
            )

    for name in bn_names:
        layer = out.layer(name)
        layer.running_mean = mean[name].astype(np.float32)
        layer.running_var = var[name].astype(np.float32)

    if log_path is not None:
        Path(log_path).write_text(
            json.dumps(log, indent=2, sort_keys=True) + "\n", "utf-8"
        )
    return out


def stat_drift(graph_before, graph_after):
    """Per-BN-layer L2 distance of running statistics between two graphs."""
    before = [l for l in graph_before.layers if l.kind == "batchnorm"]
    after = [l for l in graph_after.layers if l.kind == "batchnorm"]
    if [l.name for l in before] != [l.name for l in after]:
        raise GraphError("graphs have different BatchNorm layers")
    drift = {}
    for b, a in zip(before, after):
        if b.running_mean.shape != a.running_mean.shape:
            raise GraphError(f"channel extent differs at {b.name}")
        dm = np.linalg.norm(a.running_mean.astype(np.float64) - b.running_mean)
        dv = np.linalg.norm(a.running_var.astype(np.float64) - b.running_var)
        drift[b.name] = (float(dm), float(dv))
    return drift
