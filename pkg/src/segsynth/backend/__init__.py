"""Backend selection for the hot kernels.

The interpolation pulls and the exact distance transform exist twice: a
numba-jitted version and a pure-numpy fallback. ``SEGSYNTH_BACKEND=numpy``
forces the fallback, ``SEGSYNTH_BACKEND=numba`` requires the jitted path;
unset, numba is used when it imports. ``ACTIVE`` names the backend in use.
"""

import os

_requested = os.environ.get("SEGSYNTH_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"SEGSYNTH_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from . import numpy_impl as _impl

    ACTIVE = "numpy"
else:
    try:
        from . import numba_impl as _impl

        ACTIVE = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_impl as _impl

        ACTIVE = "numpy"

pull_affine_linear = _impl.pull_affine_linear
pull_affine_nearest = _impl.pull_affine_nearest
pull_field_linear = _impl.pull_field_linear
pull_field_nearest = _impl.pull_field_nearest
edt_squared = _impl.edt_squared
blur_rows_replicate = _impl.blur_rows_replicate

__all__ = [
    "ACTIVE",
    "pull_affine_linear",
    "pull_affine_nearest",
    "pull_field_linear",
    "pull_field_nearest",
    "edt_squared",
    "blur_rows_replicate",
]
