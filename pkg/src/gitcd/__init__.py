"""Hybrid GNN and heterogeneous-attention community detection."""

__version__ = "0.1.0"
