"""Pick the compiled kernels when available, else the pure-Python ones.

Set ``ICAPM_BREAKS_PURE=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
kernels = _pykernels

if os.environ.get("ICAPM_BREAKS_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"

garch_m_filter = kernels.garch_m_filter
segment_dp = kernels.segment_dp
