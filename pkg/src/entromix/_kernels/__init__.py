"""Kernel backend selection.

The compiled Cython core (``_core``) is preferred when it has been built;
otherwise the pure-numpy fallback is used. Set ENTROMIX_BACKEND=numpy or
ENTROMIX_BACKEND=compiled to force a backend — forcing "compiled" raises
if the extension is missing. ``BACKEND`` names the active choice.

Both backends expose the same functions with identical semantics; results
agree to floating-point tolerance but are not guaranteed bitwise equal
across backends (determinism holds within a backend).
"""

import os

_requested = os.environ.get("ENTROMIX_BACKEND", "").strip().lower()
if _requested not in ("", "compiled", "numpy"):
    raise ImportError(
        f"ENTROMIX_BACKEND must be 'compiled' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from . import numpy_backend as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from . import numpy_backend as _impl

        BACKEND = "numpy"

gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
softmax_lastdim = _impl.softmax_lastdim
softmax_backward = _impl.softmax_backward
log_softmax_lastdim = _impl.log_softmax_lastdim
log_softmax_backward = _impl.log_softmax_backward
rownorm_forward = _impl.rownorm_forward
rownorm_backward = _impl.rownorm_backward
avgpool_forward = _impl.avgpool_forward
avgpool_backward = _impl.avgpool_backward
adamw_update = _impl.adamw_update
sgd_momentum_update = _impl.sgd_momentum_update
