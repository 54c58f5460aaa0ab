"""
CCG Bench
Benchmark harness for multivariate time-series anomaly detection with a
desk-scale constrained channel-graph detector and a Linear-AR baseline
"""

__version__ = "0.3.0"
