"""Dual-core secure-processor simulator and instrumentation toolchain."""

__version__ = "0.1.0"
