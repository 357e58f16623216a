"""High-capacity ridepooling fleet coordination.

Per decision epoch: build the pairwise shareability graph, enumerate
candidate trips per vehicle with exact routing checks, and solve the global
trip-vehicle assignment with an anytime solver under a fixed budget. Two
accelerations are included: a learned clique-feasibility filter that skips
unpromising routing checks, and shareability-graph partitioning that bounds
and parallelizes trip generation.
"""

from ._kernels import KERNEL

__version__ = "0.1.0"
__all__ = ["KERNEL", "__version__"]
