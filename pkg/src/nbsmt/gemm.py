"""GEMM lowering, threaded execution, and the cycle/collision accounting.

Convolutions are lowered to matrix multiplies (im2col) and executed on a
model of an output-stationary R x C array. Each output element's K-deep dot
product is chopped into ceil(K/T) cycles of T consecutive k indices; the T
operand pairs of a cycle are the threads sharing that output's MAC. Cycle
counts follow the analytic tiling model (no fill/drain or memory stalls):

    cycles = ceil(M/R) * ceil(N/C) * ceil(K/T)

so speedups are structural ratios against the single-threaded baseline.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from nbsmt import kernels

INT32_MAX = 2**31


@dataclass(frozen=True)
class ArrayConfig:
    """Output-stationary array geometry."""

    rows: int = 32
    cols: int = 32

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array extents must be >= 1")


@dataclass
class LayerCycles:
    """Execution statistics for one layer (or one batch slice of it).

    `slots` counts MAC issue slots: output elements times cycles per
    output. `collision_cycles` is how many of those slots had two or more
    threads contending, and `abs_err_sum` accumulates |contribution -
    exact| over slots, so entries merge by plain summation.
    """

    mac_count: int = 0
    cycles: int = 0
    baseline_cycles: int = 0
    slots: int = 0
    collision_cycles: int = 0
    abs_err_sum: int = 0
    threads: int = 1

    @property
    def collision_rate(self):
        return self.collision_cycles / self.slots if self.slots else 0.0

    @property
    def mean_abs_squeeze_error(self):
        return self.abs_err_sum / self.slots if self.slots else 0.0

    def merge(self, other):
        if other.threads != self.threads:
            raise ValueError("cannot merge entries with different thread counts")
        self.mac_count += other.mac_count
        self.cycles += other.cycles
        self.baseline_cycles += other.baseline_cycles
        self.slots += other.slots
        self.collision_cycles += other.collision_cycles
        self.abs_err_sum += other.abs_err_sum

    def to_dict(self):
        return {
            "mac_count": self.mac_count,
            "cycles": self.cycles,
            "baseline_cycles": self.baseline_cycles,
            "slots": self.slots,
            "collision_cycles": self.collision_cycles,
            "collision_rate": self.collision_rate,
            "mean_abs_squeeze_error": self.mean_abs_squeeze_error,
            "threads": self.threads,
        }


@dataclass
class CycleReport:
    """Per-layer LayerCycles, mergeable across batches."""

    layers: dict = field(default_factory=dict)

    def add(self, name, entry):
        if name in self.layers:
            self.layers[name].merge(entry)
        else:
            self.layers[name] = entry

    def merge(self, other):
        for name, entry in other.layers.items():
            self.add(name, entry)
        return self

    def total_cycles(self):
        return sum(e.cycles for e in self.layers.values())

    def total_baseline_cycles(self):
        return sum(e.baseline_cycles for e in self.layers.values())

    def to_dict(self):
        return {name: e.to_dict() for name, e in self.layers.items()}


def layer_cycles(M, K, N, rows=32, cols=32, threads=1):
    """Cycles to compute an M x K x N GEMM on an R x C array at T threads."""
    if min(M, K, N) < 1:
        raise ValueError("GEMM dimensions must be positive")
    return math.ceil(M / rows) * math.ceil(N / cols) * math.ceil(K / threads)


def speedup(report, baseline=None):
    """Total baseline cycles over total configured cycles.

    The baseline is the same workload with every layer single-threaded; it
    is tracked inside each entry, or can be supplied as a separate all-1T
    report measured independently.
    """
    base = baseline.total_cycles() if baseline is not None else report.total_baseline_cycles()
    return base / report.total_cycles()


def im2col_lower(x, kernel, stride, padding, pad_value=0):
    """Lower conv input (N, C, H, W) to the (M, K) activation matrix.

    M = N * out_h * out_w, K = C * kh * kw; row-major over (image, out_y,
    out_x), column-major over (channel, ky, kx) to match weights reshaped
    as (O, C*kh*kw). Padding cells take `pad_value` (the activation
    zero-point, so they represent real zeros).
    """
    kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
    n, c, h, w = x.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(f"kernel {kh}x{kw} too large for input {h}x{w} pad {padding}")
    if padding:
        padded = np.full((n, c, h + 2 * padding, w + 2 * padding), pad_value, dtype=x.dtype)
        padded[:, :, padding : padding + h, padding : padding + w] = x
    else:
        padded = x
    win = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)
    return np.ascontiguousarray(cols), (out_h, out_w)


def _check_ranges(A, W):
    if A.dtype != np.uint8:
        raise TypeError(f"activations must be uint8, got {A.dtype}")
    if W.dtype != np.int8:
        raise TypeError(f"weights must be int8, got {W.dtype}")
    if W.min(initial=0) < -127:
        raise ValueError("weight -128 outside the symmetric range")


def reference_gemm(A, W):
    """Exact integer GEMM (uint8 x int8 -> int32), no threading noise.

    Runs through float64 BLAS when every partial sum is exactly
    representable, falling back to integer matmul otherwise.
    """
    _check_ranges(A, W)
    K = A.shape[1]
    if K * 255 * 127 < 2**53:
        acc = A.astype(np.float64) @ W.astype(np.float64)
        acc = np.rint(acc).astype(np.int64)
    else:
        acc = A.astype(np.int64) @ W.astype(np.int64)
    if acc.size and max(acc.max(), -acc.min()) >= INT32_MAX:
        raise OverflowError("GEMM accumulator exceeds 32-bit signed range")
    return acc.astype(np.int32)


def nbsmt_gemm(A, W, threads, array=ArrayConfig()):
    """Threaded GEMM of uint8 activations (M, K) by int8 weights (K, N).

    Returns (out, LayerCycles). Bit-exact against reference_gemm at one
    thread; at two or four, colliding cycles perturb products per the
    squeeze rules and the perturbation is tallied in the report entry.
    """
    _check_ranges(A, W)
    if threads not in (1, 2, 4):
        raise ValueError(f"thread capacity must be 1, 2 or 4, got {threads}")
    M, K = A.shape
    K2, N = W.shape
    if K != K2:
        raise ValueError(f"inner dimensions differ: {K} vs {K2}")

    pad = (-K) % threads
    if pad:
        A = np.pad(A, ((0, 0), (0, pad)))
        W = np.pad(W, ((0, pad), (0, 0)))

    out = np.zeros((M, N), np.int64)
    if threads == 1:
        coll, abse = kernels.gemm_t1(A, W, out)
    else:
        kern = kernels.gemm_t2 if threads == 2 else kernels.gemm_t4
        coll, abse = kern(A, W, kernels.reduced_weights(W), out, kernels.REDUCE_U)

    if out.size and max(out.max(), -out.min()) >= INT32_MAX:
        raise OverflowError("GEMM accumulator exceeds 32-bit signed range")
    entry = LayerCycles(
        mac_count=M * N * K,
        cycles=layer_cycles(M, K, N, array.rows, array.cols, threads),
        baseline_cycles=layer_cycles(M, K, N, array.rows, array.cols, 1),
        slots=M * N * math.ceil(K / threads),
        collision_cycles=int(coll),
        abs_err_sum=int(abse),
        threads=threads,
    )
    return out.astype(np.int32), entry
