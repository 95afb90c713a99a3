"""Narrow-space architecture synthesis for memory- and latency-constrained devices."""

__version__ = "0.1.0"
