"""Compiled GEMM kernels implementing the thread-squeeze rules.

These mirror `squeeze.mac_cycle` exactly but walk whole matrices. The hot
loops are structured so the per-cycle activation work is hoisted out of the
output-column loop: each (row, cycle) classifies its activations once, and
the column loop then runs branch-light so it vectorizes. The test suite
checks these kernels bit-for-bit against the scalar semantics and against
an independently written oracle.

Array dtypes: activations uint8, weights int8, accumulators int64. The
reduced-weight matrix is precomputed per GEMM call (a 256-entry table
lookup), as is the 256-entry unsigned reduction table.
"""

import numba
import numpy as np

from nbsmt.squeeze import reduce_signed, reduce_unsigned

REDUCE_U = np.array([reduce_unsigned(x) for x in range(256)], dtype=np.int32)

# indexed by w + 127 for w in [-127, 127]
REDUCE_S = np.array([reduce_signed(w - 127) for w in range(255)], dtype=np.int32)


def reduced_weights(W):
    """Precompute the 4-bit-reduced value of every weight in a (K, N) matrix."""
    return REDUCE_S[W.astype(np.int32) + 127]


@numba.njit(cache=True, nogil=True)
def gemm_t1(A, W, out):
    """Single-thread GEMM: one k index per cycle, always exact."""
    M, K = A.shape
    N = W.shape[1]
    for m in range(M):
        for n in range(N):
            out[m, n] = 0
        for k in range(K):
            a = np.int32(A[m, k])
            if a == 0:
                continue
            for n in range(N):
                out[m, n] += a * np.int32(W[k, n])
    return np.int64(0), np.int64(0)


@numba.njit(cache=True, nogil=True)
def gemm_t2(A, W, RW, out, ru):
    """Two-thread GEMM. K must be even (caller zero-pads)."""
    M, K = A.shape
    N = W.shape[1]
    ncyc = K // 2
    coll = np.int64(0)
    abse = np.int64(0)
    acc = np.zeros(N, np.int64)
    for m in range(M):
        acc[:] = 0
        for c in range(ncyc):
            b = 2 * c
            a0 = np.int32(A[m, b])
            a1 = np.int32(A[m, b + 1])
            za = (1 if a0 != 0 else 0) + (1 if a1 != 0 else 0)
            if za == 0:
                continue
            if za == 1:
                j = b if a0 != 0 else b + 1
                aj = np.int32(A[m, j])
                for n in range(N):
                    acc[n] += aj * np.int32(W[j, n])
            else:
                ra0 = ru[a0]
                ra1 = ru[a1]
                d0 = ra0 - a0
                d1 = ra1 - a1
                for n in range(N):
                    w0 = np.int32(W[b, n])
                    w1 = np.int32(W[b + 1, n])
                    exact = a0 * w0 + a1 * w1
                    if w0 != 0 and w1 != 0:
                        rw0 = RW[b, n]
                        rw1 = RW[b + 1, n]
                        p0 = ra0 * w0 if abs(d0 * w0) <= abs((rw0 - w0) * a0) else a0 * rw0
                        p1 = ra1 * w1 if abs(d1 * w1) <= abs((rw1 - w1) * a1) else a1 * rw1
                        contrib = p0 + p1
                        acc[n] += contrib
                        coll += 1
                        d = contrib - exact
                        abse += d if d >= 0 else -d
                    else:
                        acc[n] += exact
        out[m, :] = acc
    return coll, abse


@numba.njit(cache=True, nogil=True)
def gemm_t4(A, W, RW, out, ru):
    """Four-thread GEMM. K must be a multiple of 4 (caller zero-pads)."""
    M, K = A.shape
    N = W.shape[1]
    ncyc = K // 4
    coll = np.int64(0)
    abse = np.int64(0)
    acc = np.zeros(N, np.int64)
    for m in range(M):
        acc[:] = 0
        for c in range(ncyc):
            b = 4 * c
            a0 = np.int32(A[m, b])
            a1 = np.int32(A[m, b + 1])
            a2 = np.int32(A[m, b + 2])
            a3 = np.int32(A[m, b + 3])
            za = (
                (1 if a0 != 0 else 0)
                + (1 if a1 != 0 else 0)
                + (1 if a2 != 0 else 0)
                + (1 if a3 != 0 else 0)
            )
            if za == 0:
                continue
            if za == 1:
                j = b if a0 != 0 else (b + 1 if a1 != 0 else (b + 2 if a2 != 0 else b + 3))
                aj = np.int32(A[m, j])
                for n in range(N):
                    acc[n] += aj * np.int32(W[j, n])
            elif za == 2:
                j0 = b if a0 != 0 else (b + 1 if a1 != 0 else b + 2)
                j1 = b + 3 if a3 != 0 else (b + 2 if a2 != 0 else b + 1)
                x0 = np.int32(A[m, j0])
                x1 = np.int32(A[m, j1])
                rx0 = ru[x0]
                rx1 = ru[x1]
                d0 = rx0 - x0
                d1 = rx1 - x1
                for n in range(N):
                    w0 = np.int32(W[j0, n])
                    w1 = np.int32(W[j1, n])
                    exact = x0 * w0 + x1 * w1
                    if w0 != 0 and w1 != 0:
                        rw0 = RW[j0, n]
                        rw1 = RW[j1, n]
                        p0 = rx0 * w0 if abs(d0 * w0) <= abs((rw0 - w0) * x0) else x0 * rw0
                        p1 = rx1 * w1 if abs(d1 * w1) <= abs((rw1 - w1) * x1) else x1 * rw1
                        contrib = p0 + p1
                        acc[n] += contrib
                        coll += 1
                        d = contrib - exact
                        abse += d if d >= 0 else -d
                    else:
                        acc[n] += exact
            else:
                ra0 = ru[a0]
                ra1 = ru[a1]
                ra2 = ru[a2]
                ra3 = ru[a3]
                e0 = ra0 - a0
                e1 = ra1 - a1
                e2 = ra2 - a2
                e3 = ra3 - a3
                for n in range(N):
                    w0 = np.int32(W[b, n])
                    w1 = np.int32(W[b + 1, n])
                    w2 = np.int32(W[b + 2, n])
                    w3 = np.int32(W[b + 3, n])
                    na = (
                        (1 if (a0 != 0 and w0 != 0) else 0)
                        + (1 if (a1 != 0 and w1 != 0) else 0)
                        + (1 if (a2 != 0 and w2 != 0) else 0)
                        + (1 if (a3 != 0 and w3 != 0) else 0)
                    )
                    exact = a0 * w0 + a1 * w1 + a2 * w2 + a3 * w3
                    if na <= 1:
                        acc[n] += exact
                    else:
                        rw0 = RW[b, n]
                        rw1 = RW[b + 1, n]
                        rw2 = RW[b + 2, n]
                        rw3 = RW[b + 3, n]
                        if na == 2:
                            p0 = ra0 * w0 if abs(e0 * w0) <= abs((rw0 - w0) * a0) else a0 * rw0
                            p1 = ra1 * w1 if abs(e1 * w1) <= abs((rw1 - w1) * a1) else a1 * rw1
                            p2 = ra2 * w2 if abs(e2 * w2) <= abs((rw2 - w2) * a2) else a2 * rw2
                            p3 = ra3 * w3 if abs(e3 * w3) <= abs((rw3 - w3) * a3) else a3 * rw3
                            contrib = p0 + p1 + p2 + p3
                        else:
                            contrib = ra0 * rw0 + ra1 * rw1 + ra2 * rw2 + ra3 * rw3
                        acc[n] += contrib
                        coll += 1
                        d = contrib - exact
                        abse += d if d >= 0 else -d
        out[m, :] = acc
    return coll, abse
