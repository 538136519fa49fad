"""Pick the compiled kernels when built, else the NumPy fallback.

Set ``FEDCOX_BACKEND=python`` to force the fallback.
"""
import os

from fedcox import _pykernels

_requested = os.environ.get("FEDCOX_BACKEND", "auto").lower()

if _requested == "python":
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from fedcox import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        kernels = _pykernels
        BACKEND = "python"

cox_terms = kernels.cox_terms
concordance_counts = kernels.concordance_counts
