"""Backend selection for the Monte Carlo projection kernel.

The compiled extension is used when it was built; otherwise the NumPy
implementation. Set ``EXCESSMORT_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

if os.environ.get("EXCESSMORT_BACKEND", "").lower() == "python" or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

simulate_grouped = BACKENDS[BACKEND].simulate_grouped
