"""Streaming components: vector index, median cache, drift detector, engine."""

from .cache import MedianCache
from .drift import DriftDetector, calibrate_h
from .engine import EngineConfig, StreamState
from .index import VectorIndex

__all__ = ["DriftDetector", "EngineConfig", "MedianCache", "StreamState", "VectorIndex", "calibrate_h"]
