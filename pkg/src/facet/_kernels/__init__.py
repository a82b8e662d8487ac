"""Hot-kernel backend selection.

Imports the compiled extension when present, otherwise the pure-numpy
fallback.  Set FACET_PURE_PYTHON=1 to force the fallback even when the
extension is built (used by the backend benchmark and parity tests).
"""

import os

from . import _fallback

NONLIN_NONE = _fallback.NONLIN_NONE
NONLIN_TANH = _fallback.NONLIN_TANH

_impl = _fallback
BACKEND = "python"
if not os.environ.get("FACET_PURE_PYTHON"):
    try:
        from . import _core
        _impl = _core
        BACKEND = "compiled"
    except ImportError:
        pass

synthesize_clipped = _impl.synthesize_clipped
score_candidates = _impl.score_candidates
sgd_epoch = _impl.sgd_epoch


def backends():
    """Mapping of available backend name -> module (for benchmarks/tests)."""
    found = {"python": _fallback}
    try:
        from . import _core
        found["compiled"] = _core
    except ImportError:
        pass
    return found
