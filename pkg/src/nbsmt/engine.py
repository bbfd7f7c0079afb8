"""End-to-end forward pass of the quantized network.

Per conv/FC layer: quantize the float input, run the integer GEMM (threaded
kernel for accelerated layers, exact reference for exempt layers and the
quantized baseline), dequantize, add the float bias, then BatchNorm / ReLU
/ pooling in float before the next layer requantizes. Exempt layers may
carry a nonzero activation zero-point; the zero-point correction term
(zp * sum of weights per output) is applied on their exact path only, so
accelerated layers must have zero-point 0 (true for anything fed by ReLU).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from nbsmt.gemm import (
    ArrayConfig,
    CycleReport,
    LayerCycles,
    im2col_lower,
    layer_cycles,
    nbsmt_gemm,
    reference_gemm,
)
from nbsmt.graph import GraphError, LayerGraph
from nbsmt.quant import QuantError, quantize_activations, quantize_weights

VALID_THREADS = (1, 2, 4)


@dataclass(frozen=True)
class ExecutionMode:
    """How conv/FC layers execute: float, exact int8, or threaded int8."""

    kind: str  # "float32" | "quant_reference" | "nbsmt"
    threads: tuple = ()  # ((layer_name, T), ...) for nbsmt

    @staticmethod
    def float32():
        return ExecutionMode(kind="float32")

    @staticmethod
    def quant_reference():
        return ExecutionMode(kind="quant_reference")

    @staticmethod
    def nbsmt(thread_config):
        for name, t in dict(thread_config).items():
            if t not in VALID_THREADS:
                raise ValueError(f"layer {name}: thread capacity {t} not in {VALID_THREADS}")
        return ExecutionMode(kind="nbsmt", threads=tuple(sorted(dict(thread_config).items())))

    def thread_map(self):
        return dict(self.threads)

    def layer_threads(self, layer):
        if self.kind != "nbsmt" or getattr(layer, "nbsmt_exempt", True):
            return 1
        return self.thread_map().get(layer.name, 1)


def uniform_threads(graph, t):
    """Thread config running every eligible layer at capacity t."""
    return {name: t for name in graph.eligible_layers()}


@dataclass
class ForwardResult:
    logits: np.ndarray
    report: CycleReport
    taps: dict = field(default_factory=dict)
    bn_stats: dict = field(default_factory=dict)


def _normalize_input(graph, batch):
    mean = np.asarray(graph.input_norm["mean"], np.float32).reshape(1, -1, 1, 1)
    std = np.asarray(graph.input_norm["std"], np.float32).reshape(1, -1, 1, 1)
    return (batch - mean) / std


def _quantized_matmul(A, Wq, lq, threads, array, name):
    """Integer GEMM + zero-point correction + dequantize to float32.

    A: (M, K) uint8, Wq: QTensor with int8 data laid out (out, K).
    """
    Wmat = np.ascontiguousarray(Wq.data.reshape(Wq.data.shape[0], -1).T)
    if threads == 1:
        acc = reference_gemm(A, Wmat)
        M, K = A.shape
        cycles = layer_cycles(M, K, Wmat.shape[1], array.rows, array.cols, 1)
        entry = LayerCycles(
            mac_count=M * Wmat.shape[1] * K,
            cycles=cycles,
            baseline_cycles=cycles,
            slots=M * Wmat.shape[1] * K,
            threads=1,
        )
        if lq.act_zero_point:
            acc = acc.astype(np.int64) - lq.act_zero_point * Wmat.astype(np.int64).sum(0)
    else:
        if lq.act_zero_point:
            raise QuantError(
                f"layer {name}: accelerated execution requires zero-point 0, "
                f"got {lq.act_zero_point}"
            )
        acc, entry = nbsmt_gemm(A, Wmat, threads, array)
    scales = lq.act_scale * Wq.scale  # (out,) float64
    out = acc.astype(np.float64) * scales[None, :]
    return out.astype(np.float32), entry


def forward(graph, qparams, batch, mode, array=ArrayConfig(), collect_taps=None,
            bn_batch_stats=False):
    """Run one batch through the graph; deterministic per (inputs, mode).

    collect_taps: layer names whose float input should be captured.
    bn_batch_stats: normalize each BatchNorm with this batch's own
    statistics (training-style) and record them in the result, leaving the
    graph untouched.
    """
    if mode.kind != "float32" and qparams is None:
        raise QuantError("quantized execution modes need calibrated QuantParams")
    taps_wanted = set(collect_taps or ())
    result = ForwardResult(logits=None, report=CycleReport())
    x = _normalize_input(graph, np.asarray(batch, np.float32))

    for layer in graph.layers:
        if layer.kind == "conv2d":
            if layer.name in taps_wanted:
                result.taps[layer.name] = x
            x = _run_conv(layer, x, qparams, mode, array, result)
        elif layer.kind == "fc":
            x = x.reshape(len(x), -1)
            if layer.name in taps_wanted:
                result.taps[layer.name] = x
            x = _run_fc(layer, x, qparams, mode, array, result)
        elif layer.kind == "batchnorm":
            x = _run_batchnorm(layer, x, bn_batch_stats, result)
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        elif layer.kind == "maxpool":
            win = sliding_window_view(x, (layer.kernel, layer.kernel), axis=(2, 3))
            x = win[:, :, :: layer.stride, :: layer.stride].max(axis=(4, 5))
        else:
            raise GraphError(f"unknown layer kind {layer.kind!r}")

    result.logits = x
    return result


def _run_conv(layer, x, qparams, mode, array, result):
    n = len(x)
    kh, kw = layer.weight.shape[2:]
    if mode.kind == "float32":
        cols, (oh, ow) = im2col_lower(x, (kh, kw), layer.stride, layer.padding, 0.0)
        wmat = layer.weight.reshape(layer.weight.shape[0], -1).T
        out = cols @ wmat + layer.bias
    else:
        lq = qparams.for_layer(layer.name)
        qa = quantize_activations(x, lq.act_scale, lq.act_zero_point)
        A, (oh, ow) = im2col_lower(qa.data, (kh, kw), layer.stride, layer.padding,
                                   pad_value=lq.act_zero_point)
        wq = quantize_weights(layer.weight, lq.weight_scales)
        out, entry = _quantized_matmul(A, wq, lq, mode.layer_threads(layer),
                                       array, layer.name)
        out = out + layer.bias
        result.report.add(layer.name, entry)
    return out.reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)


def _run_fc(layer, x, qparams, mode, array, result):
    if mode.kind == "float32":
        return x @ layer.weight.T + layer.bias
    lq = qparams.for_layer(layer.name)
    qa = quantize_activations(x, lq.act_scale, lq.act_zero_point)
    wq = quantize_weights(layer.weight, lq.weight_scales)
    out, entry = _quantized_matmul(qa.data, wq, lq, mode.layer_threads(layer),
                                   array, layer.name)
    result.report.add(layer.name, entry)
    return out + layer.bias


def _run_batchnorm(layer, x, bn_batch_stats, result):
    shape = (1, -1) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    if bn_batch_stats:
        xd = x.astype(np.float64)
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        count = x.size // x.shape[1]
        unbiased = var * count / (count - 1) if count > 1 else var
        result.bn_stats[layer.name] = {
            "mean": mean,
            "var": unbiased,
            "count": count,
        }
    else:
        mean = layer.running_mean
        var = layer.running_var
    inv = 1.0 / np.sqrt(var + layer.eps)
    scale = (layer.gamma * inv).astype(np.float32).reshape(shape)
    shift = (layer.beta - layer.gamma * mean * inv).astype(np.float32).reshape(shape)
    return x * scale + shift


def top1_accuracy(graph, qparams, ds, mode, batch_size=64, array=ArrayConfig(), jobs=1):
    """Fraction of images whose argmax logit matches the label.

    Argmax ties resolve to the lowest class index.
    """
    return evaluate(graph, qparams, ds, mode, batch_size, array, jobs).top1


@dataclass
class EvalResult:
    correct: int
    total: int
    report: CycleReport

    @property
    def top1(self):
        return self.correct / self.total if self.total else 0.0

    def to_dict(self):
        return {
            "top1": self.top1,
            "correct": self.correct,
            "total": self.total,
            "layers": self.report.to_dict(),
        }


def evaluate(graph, qparams, ds, mode, batch_size=64, array=ArrayConfig(), jobs=1):
    """Accuracy plus merged cycle report over a dataset.

    Batches may run on a thread pool (`jobs`); reports merge in batch
    order and all counters are integers, so results are independent of
    scheduling.
    """
    starts = range(0, len(ds), batch_size)

    def run(start):
        batch = ds.images[start : start + batch_size]
        labels = ds.labels[start : start + batch_size]
        r = forward(graph, qparams, batch, mode, array)
        pred = np.argmax(r.logits, axis=1)
        return int((pred == labels).sum()), r.report

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, starts))
    else:
        outcomes = [run(s) for s in starts]

    total_report = CycleReport()
    correct = 0
    for c, rep in outcomes:
        correct += c
        total_report.merge(rep)
    return EvalResult(correct=correct, total=len(ds), report=total_report)


def fold_batchnorm(graph):
    """Fold each BatchNorm into the conv directly before it.

    Returns a new graph without BN layers; float outputs match the
    unfolded graph to within float32 rounding.
    """
    g = graph.copy()
    layers = []
    for layer in g.layers:
        if layer.kind != "batchnorm":
            layers.append(layer)
            continue
        if not layers or layers[-1].kind != "conv2d":
            raise GraphError(f"batchnorm {layer.name} does not follow a conv layer")
        conv = layers[-1]
        inv = layer.gamma / np.sqrt(layer.running_var + layer.eps)
        conv.weight = (conv.weight * inv[:, None, None, None]).astype(np.float32)
        conv.bias = ((conv.bias - layer.running_mean) * inv + layer.beta).astype(np.float32)
    return LayerGraph(layers=layers, input_norm=g.input_norm, metadata=g.metadata)
