"""Semantics of one shared multiply-accumulate unit under thread squeezing.

A "thread" is one (activation, weight) operand pair feeding a dot product.
When two or more threads at the same MAC have nonzero products in the same
cycle, they collide; instead of stalling, colliding threads are squeezed:
operand precision drops from 8 to 4 significant bits for that cycle so all
products fit the unit. This module defines, exactly and testably, which
operands are reduced and what numeric error that introduces.

The scalar functions here are the readable reference; the vectorized GEMM
kernels in `kernels.py` implement the same rules and are tested against
these (and against an independent oracle in the test suite).
"""

from dataclasses import dataclass

REDUCE_BITS = 4

FULL_BUDGET = (8, 8)
HALF_BUDGET = (4, 8)  # one operand of the pair reduced, chosen per thread
QUARTER_BUDGET = (4, 4)


def reduce_unsigned(x):
    """Drop an unsigned 8-bit value to a 4-bit mantissa times 16.

    Round to nearest, ties up, mantissa clamped to [0, 15]. Returns the
    represented value, e.g. 100 -> 96, 255 -> 240.
    """
    return min((x + 8) >> REDUCE_BITS, 15) << REDUCE_BITS


def reduce_signed(x):
    """Drop a signed 8-bit value to a 4-bit mantissa times 16.

    Round to nearest, ties away from zero, mantissa clamped to [-8, 7].
    """
    if x < 0:
        return -min((8 - x) >> REDUCE_BITS, 8) << REDUCE_BITS
    return min((x + 8) >> REDUCE_BITS, 7) << REDUCE_BITS


def reduce_operand(x, signed):
    """Reduce one operand by REDUCE_BITS bits; returns the represented value."""
    return reduce_signed(x) if signed else reduce_unsigned(x)


def active_threads(pairs):
    """Indices of threads whose product actually needs the MAC this cycle.

    A zero activation or zero weight makes the product zero; such threads
    sit the cycle out and cause no collision.
    """
    return [i for i, (a, w) in enumerate(pairs) if a != 0 and w != 0]


@dataclass(frozen=True)
class SqueezePolicy:
    """Thread capacity plus the reduction schedule applied on collision."""

    threads: int = 1

    def __post_init__(self):
        if self.threads not in (1, 2, 4):
            raise ValueError(f"thread capacity must be 1, 2 or 4, got {self.threads}")

    def bit_budget(self, active_count):
        """Per-thread (activation_bits, weight_bits) for a given collision size."""
        if active_count <= 1:
            return FULL_BUDGET
        if active_count == 2:
            return HALF_BUDGET
        return QUARTER_BUDGET


@dataclass(frozen=True)
class ThreadError:
    """Diagnostic record for one thread in one cycle."""

    exact: int
    used: int

    @property
    def error(self):
        return self.used - self.exact


def mac_cycle(pairs, policy):
    """One MAC cycle over up to `policy.threads` operand pairs.

    Returns (contribution, records) where records is a per-thread list of
    ThreadError. With at most one active thread the contribution is the
    exact product sum. With exactly two, each active thread reduces the one
    operand whose reduction perturbs its product least (ties reduce the
    activation). With three or more, every active thread reduces both
    operands. Inactive threads contribute zero.
    """
    if len(pairs) > policy.threads:
        raise ValueError(f"{len(pairs)} pairs exceeds capacity {policy.threads}")
    active = active_threads(pairs)
    records = []
    total = 0
    for i, (a, w) in enumerate(pairs):
        if not 0 <= a <= 255:
            raise ValueError(f"activation {a} outside [0, 255]")
        if not -127 <= w <= 127:
            raise ValueError(f"weight {w} outside [-127, 127]")
        exact = a * w
        if i not in active:
            records.append(ThreadError(exact=0, used=0))
            continue
        if len(active) <= 1:
            used = exact
        elif len(active) == 2:
            ra, rw = reduce_unsigned(a), reduce_signed(w)
            if abs((ra - a) * w) <= abs((rw - w) * a):
                used = ra * w
            else:
                used = a * rw
        else:
            used = reduce_unsigned(a) * reduce_signed(w)
        total += used
        records.append(ThreadError(exact=exact, used=used))
    return total, records
