"""Integer GEMM kernels, cycle model, and im2col lowering."""

import numpy as np
import pytest

from nbsmt.gemm import (ArrayConfig, CycleReport, LayerCycles, im2col_lower,
                        layer_cycles, nbsmt_gemm, reference_gemm, speedup)
from oracles import gemm_ref, nbsmt_gemm_ref


def entry_for(M, K, N, rows=32, cols=32, threads=1):
    """Build a LayerCycles record from the closed-form cycle counts."""
    return LayerCycles(
        mac_count=M * K * N,
        cycles=layer_cycles(M, K, N, rows, cols, threads),
        baseline_cycles=layer_cycles(M, K, N, rows, cols, 1),
        slots=M * N * -(-K // threads),
        threads=threads,
    )


def random_gemm(rng, max_m=6, max_k=12, max_n=6, zero_bias=0.4):
    M = int(rng.integers(1, max_m + 1))
    K = int(rng.integers(1, max_k + 1))
    N = int(rng.integers(1, max_n + 1))
    A = rng.integers(0, 256, (M, K)).astype(np.uint8)
    W = rng.integers(-127, 128, (K, N)).astype(np.int8)
    A[rng.random((M, K)) < zero_bias] = 0
    W[rng.random((K, N)) < zero_bias] = 0
    return A, W


def test_reference_gemm_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        A, W = random_gemm(rng)
        ref = np.array(gemm_ref(A.astype(int).tolist(), W.astype(int).tolist()))
        got = reference_gemm(A, W)
        assert got.dtype == np.int32
        np.testing.assert_array_equal(got, ref)


def test_threaded_gemm_single_thread_is_reference():
    rng = np.random.default_rng(1)
    for _ in range(200):
        A, W = random_gemm(rng)
        out, entry = nbsmt_gemm(A, W, threads=1)
        np.testing.assert_array_equal(out, reference_gemm(A, W))
        assert entry.collision_cycles == 0
        assert entry.abs_err_sum == 0


@pytest.mark.parametrize("threads", [2, 4])
def test_threaded_gemm_matches_scalar_oracle(threads):
    rng = np.random.default_rng(2 + threads)
    for _ in range(100):
        A, W = random_gemm(rng)
        out, entry = nbsmt_gemm(A, W, threads=threads)
        ref_out, ref_coll, ref_err, ref_slots = nbsmt_gemm_ref(
            A.astype(int).tolist(), W.astype(int).tolist(), threads)
        np.testing.assert_array_equal(out, np.array(ref_out))
        assert entry.collision_cycles == ref_coll
        assert entry.abs_err_sum == ref_err
        assert entry.slots == ref_slots


def test_collision_rate_grows_with_density():
    rng = np.random.default_rng(9)
    A_dense = rng.integers(1, 256, (16, 64)).astype(np.uint8)
    W_dense = rng.integers(1, 128, (64, 16)).astype(np.int8)
    A_sparse = A_dense.copy()
    A_sparse[rng.random(A_sparse.shape) < 0.5] = 0
    _, dense = nbsmt_gemm(A_dense, W_dense, threads=4)
    _, sparse = nbsmt_gemm(A_sparse, W_dense, threads=4)
    assert dense.collision_rate == 1.0
    assert sparse.collision_rate < dense.collision_rate


def test_invalid_thread_count_rejected():
    A = np.zeros((2, 4), np.uint8)
    W = np.zeros((4, 2), np.int8)
    with pytest.raises(ValueError):
        nbsmt_gemm(A, W, threads=3)


def test_layer_cycles_hand_computed():
    # 64x90 by 90x100 on a 32x32 array: ceil(64/32)*ceil(100/32)*ceil(90/T)
    assert layer_cycles(64, 90, 100, threads=1) == 2 * 4 * 90
    assert layer_cycles(64, 90, 100, threads=2) == 2 * 4 * 45
    assert layer_cycles(64, 90, 100, threads=4) == 2 * 4 * 23


def test_layer_cycles_array_shape():
    assert layer_cycles(32, 32, 32, rows=8, cols=8, threads=1) == 4 * 4 * 32
    assert layer_cycles(1, 1, 1, threads=1) == 1
    with pytest.raises(ValueError):
        layer_cycles(0, 1, 1)


def test_two_layer_speedup_example():
    # layer X: M=64, K=96, N=64 at T=4; layer Y: same shape at T=1
    report = CycleReport()
    report.add("x", entry_for(64, 96, 64, threads=4))
    report.add("y", entry_for(64, 96, 64, threads=1))
    base = 2 * 2 * 96
    assert report.total_baseline_cycles() == 2 * base
    assert report.total_cycles() == base // 4 + base
    assert speedup(report) == pytest.approx(2 * base / (base // 4 + base))
    assert speedup(report) == pytest.approx(1.6)


def test_all_single_thread_speedup_is_one():
    report = CycleReport()
    for i, (m, k, n) in enumerate([(5, 7, 3), (64, 90, 100), (1, 1, 1)]):
        report.add(f"l{i}", entry_for(m, k, n, threads=1))
    assert speedup(report) == 1.0


def test_speedup_against_explicit_baseline_report():
    fast = CycleReport()
    fast.add("x", entry_for(64, 96, 64, threads=2))
    base = CycleReport()
    base.add("x", entry_for(64, 96, 64, threads=1))
    assert speedup(fast, baseline=base) == 2.0


def test_cycle_entry_merge_accumulates():
    a = entry_for(4, 16, 4, threads=2)
    b = entry_for(8, 16, 4, threads=2)
    cycles_a, slots_a, macs_a = a.cycles, a.slots, a.mac_count
    a.merge(b)
    assert a.cycles == cycles_a + b.cycles
    assert a.slots == slots_a + b.slots
    assert a.mac_count == macs_a + b.mac_count
    with pytest.raises(ValueError):
        a.merge(entry_for(4, 16, 4, threads=4))


def test_report_merge_by_layer_name():
    r1 = CycleReport()
    r1.add("x", entry_for(4, 16, 4, threads=2))
    r2 = CycleReport()
    r2.add("x", entry_for(4, 16, 4, threads=2))
    r2.add("y", entry_for(2, 8, 2, threads=1))
    r1.merge(r2)
    assert r1.layers["x"].cycles == 2 * entry_for(4, 16, 4, threads=2).cycles
    assert "y" in r1.layers


def test_gemm_entry_consistent_with_formula():
    rng = np.random.default_rng(5)
    A = rng.integers(0, 256, (7, 20)).astype(np.uint8)
    W = rng.integers(-127, 128, (20, 9)).astype(np.int8)
    _, entry = nbsmt_gemm(A, W, threads=2, array=ArrayConfig(rows=4, cols=4))
    assert entry.cycles == layer_cycles(7, 20, 9, rows=4, cols=4, threads=2)
    assert entry.baseline_cycles == layer_cycles(7, 20, 9, rows=4, cols=4)
    assert entry.slots == 7 * 9 * 10


def test_im2col_identity_kernel():
    x = np.arange(2 * 1 * 3 * 3, dtype=np.float32).reshape(2, 1, 3, 3)
    cols, (oh, ow) = im2col_lower(x, kernel=1, stride=1, padding=0)
    assert (oh, ow) == (3, 3)
    np.testing.assert_array_equal(cols.reshape(2, 3, 3, 1)[..., 0],
                                  x[:, 0])


def test_im2col_against_direct_convolution():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    cols, (oh, ow) = im2col_lower(x, kernel=3, stride=1, padding=1)
    out = (cols @ w.reshape(4, -1).T).reshape(2, oh, ow, 4).transpose(0, 3, 1, 2)

    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    direct = np.zeros((2, 4, 6, 6), np.float32)
    for n in range(2):
        for o in range(4):
            for i in range(6):
                for j in range(6):
                    direct[n, o, i, j] = np.sum(
                        padded[n, :, i:i + 3, j:j + 3] * w[o])
    np.testing.assert_allclose(out, direct, rtol=1e-5, atol=1e-5)


def test_im2col_pad_value_used_for_zero_point():
    x = np.ones((1, 1, 2, 2), np.float32)
    cols, _ = im2col_lower(x, kernel=3, stride=1, padding=1, pad_value=7.0)
    assert cols.min() == 1.0 or 7.0 in cols
    assert (cols == 7.0).sum() > 0


def test_reference_gemm_overflow_detected():
    A = np.full((1, 70000), 255, np.uint8)
    W = np.full((70000, 1), 127, np.int8)
    with pytest.raises(OverflowError):
        reference_gemm(A, W)
