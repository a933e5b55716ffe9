"""Pick the compiled path kernels when built, else the numpy twin.

FIBRIL_KERNELS=numpy forces the fallback.
"""
import os

BACKEND = "numpy"
if os.environ.get("FIBRIL_KERNELS", "").lower() != "numpy":
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        kernels = None
if BACKEND == "numpy":
    from . import _kernels_py as kernels  # noqa: F811
