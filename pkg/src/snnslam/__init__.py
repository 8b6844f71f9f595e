"""Continual-learning DVS-radar SLAM with SNN-STDP feature extraction."""

__version__ = "0.1.0"
