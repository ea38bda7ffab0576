"""Trace-to-sample pipeline for GPU kernel workloads.

Parses per-warp instruction traces, lifts them into heterogeneous
relational graphs, trains a relational graph encoder with a contrastive
objective, clusters the resulting kernel embeddings, and selects one
representative kernel per cluster so that whole-workload metrics can be
reconstructed from a handful of simulated kernels.
"""

__version__ = "0.1.0"
