"""Desk-scale mmWave beam selection simulator.

Synthetic V2I scenes -> semantic localization of the target vehicle
(GPS k-means knowledge base + windowed mask selection) -> two lightweight
classifiers (mask CNN and a GPS/previous-beam transformer) -> weighted
entropy fusion -> Top-K / ACE / power-loss evaluation against an
exhaustive-search beam oracle.
"""

__version__ = "0.1.0"
