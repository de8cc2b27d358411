"""histexpr: gene-expression prediction from histopathology patch features.

Pipeline stages: stain-normalized patch extraction, slide-level feature
aggregation, a 1D-convolution regression head trained with Adam and early
stopping, and evaluation through correlation/FDR statistics, subtype
calling, and survival analysis.
"""

from .accel import BACKEND, NUMBA_ENABLED

__version__ = "0.1.0"

__all__ = ["BACKEND", "NUMBA_ENABLED", "__version__"]
