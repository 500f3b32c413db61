"""Multi-view depth and uncertainty estimation pipeline.

Plane-sweep feature matching over a discrete depth hypothesis space,
soft-argmax depth regression with a learned matching confidence, Gauss-Newton
pose-graph refinement, a synthetic dynamic-scene generator, and
sparsification-based uncertainty evaluation.
"""

__version__ = "0.1.0"
