"""Personalized, private peer-to-peer learning simulator.

Decentralized L1 client grouping, DP co-training of proxy/local model pairs
via mutual distillation, and byzantine-robust in-group aggregation.
"""

__version__ = "0.1.0"
