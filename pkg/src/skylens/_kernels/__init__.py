"""Hot-loop kernels with a compiled fast path.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
numpy implementations in ``_pykernels`` are used. Set ``SKYLENS_PURE_PYTHON=1``
to force the numpy path.
"""

import os

from . import _pykernels as python

try:
    if os.environ.get("SKYLENS_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure python requested")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

backend = compiled if compiled is not None else python
BACKEND_NAME = "cython" if compiled is not None else "numpy"

fbm = backend.fbm
value_noise = backend.value_noise
octave_key = backend.octave_key
hermite_eval = backend.hermite_eval
trace_rays = backend.trace_rays
shear_stats = backend.shear_stats

__all__ = [
    "BACKEND_NAME", "backend", "compiled", "python", "fbm", "value_noise",
    "octave_key", "hermite_eval", "trace_rays", "shear_stats",
]
