"""Cycle-level performance simulator for 3D-DRAM-stacked multi-core LLM accelerators."""

__version__ = "0.1.0"
