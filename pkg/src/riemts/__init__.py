"""Manifold-valued features of network time series and their clustering.

Submodules
----------
manifolds   Grassmann and PD geometry (distances, log/exp maps)
kernels     kernel functions, kernel matrices, diagonal loading, SDE learning
features    sliding-window observability subspaces and kernel partial correlations
clustering  GCT and the SMC, SCR and embedded k-means baselines
datagen     block-state and Wilson-Cowan generators, noise injection
harness     configs, seeds, pipeline and result tables
"""

__version__ = "0.1.0"

from .manifolds import SPD, Grassmann  # noqa: E402
from .features import FeatureSequence, WindowConfig  # noqa: E402
from .clustering import GCTConfig  # noqa: E402

__all__ = ["SPD", "Grassmann", "FeatureSequence", "WindowConfig", "GCTConfig", "__version__"]
