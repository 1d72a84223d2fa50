"""Task-agnostic divergent search over a learned outcome space.

The package implements the TAXONS search method together with its ablations
(TAXO-N, TAXO-S), the NS / PNS / RNS / RS / NT baselines, two deterministic 2D
environments with a software rasterizer, a ground-truth coverage metric and
nonparametric statistics for comparing runs.
"""

__version__ = "0.1.0"
