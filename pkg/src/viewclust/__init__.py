"""Cross-view online clustering of dense features.

Two views of an image are clustered jointly with entropic optimal transport,
the number of clusters is picked from the transport cost, and the resulting
cluster assignments drive a cross-view self-distillation loss.
"""
from viewclust.clustering import ClusteringConfig, multi_head_run, run
from viewclust.errors import (
    BadMagicError, ConfigError, ViewClustError, EmptyClusteringError, FormatError, InputError,
    NumericalError, ShapeError, StateError, TruncatedError, VersionError,
)
from viewclust.features import CropGeometry, ViewPair, make_view_pair
from viewclust.sinkhorn import TransportPlan, solve

__version__ = "0.1.0"

__all__ = [
    "BadMagicError", "ClusteringConfig", "ConfigError", "CropGeometry", "ViewClustError",
    "EmptyClusteringError", "FormatError", "InputError", "NumericalError", "ShapeError",
    "StateError", "TransportPlan", "TruncatedError", "VersionError", "ViewPair",
    "make_view_pair", "multi_head_run", "run", "solve",
]
