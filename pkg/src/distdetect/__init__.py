"""Distributed state estimation over a sensor network with local
windowed chi-square detection of false-data injection."""

from .chidetect import compute_variance_bound, threshold_from_far
from .estimator import EstimatorState
from .gainsynth import GainSet, synthesize_gain
from .monitor import DistributedChiSquareMonitor, WindowedChiSquareDetector
from .netgraph import Digraph, SensingPattern

__version__ = "0.1.0"

__all__ = [
    "Digraph",
    "DistributedChiSquareMonitor",
    "EstimatorState",
    "GainSet",
    "SensingPattern",
    "WindowedChiSquareDetector",
    "compute_variance_bound",
    "synthesize_gain",
    "threshold_from_far",
]
