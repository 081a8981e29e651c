"""Differential performance testing for standalone WebAssembly runtimes."""

__version__ = "0.1.0"
