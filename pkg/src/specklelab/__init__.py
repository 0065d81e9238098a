"""specklelab: a desk-scale dynamic laser speckle laboratory.

Synthesizes speckle movies from simulated Brownian suspensions, applies
exposure protocols and preprocessing, and trains a compact CNN to
recognize concentration classes.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError, SpeckleLabError

__all__ = ["ConfigError", "DataError", "NumericError", "SpeckleLabError", "__version__"]
