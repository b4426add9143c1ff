"""Multiple particle filtering with fused static-parameter posteriors."""

__version__ = "0.1.0"

from .gaussian import Gaussian, fuse
from .model import BenchmarkModel, make_partitioning
from .particles import ParticleCloud

__all__ = ["BenchmarkModel", "Gaussian", "ParticleCloud", "fuse", "make_partitioning", "__version__"]
