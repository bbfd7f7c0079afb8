"""Bit-accurate simulation of thread-squeezed quantized CNN inference.

The package models an output-stationary accelerator whose MAC units are
shared by several (activation, weight) threads without blocking: colliding
threads momentarily drop operand precision instead of stalling. On top of
the execution model sit an 8-bit post-training quantizer, a forward engine,
a BatchNorm statistics recalibration pass that recovers accuracy lost to
squeeze noise, magnitude pruning, and a speedup/accuracy sweep harness.
"""

__version__ = "0.1.0"
