"""Sentinel-2 10m/20m band fusion toolkit.

Unfolded back-projection super-resolution of the 20m bands, guided by
geometry derived from the 10m bands, plus the data pipeline, metrics,
and rendering utilities needed to train and evaluate it at desk scale.
"""

__version__ = "0.1.0"
