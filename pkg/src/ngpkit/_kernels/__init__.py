"""Kernel backend selection.

The compiled Cython backend is used when its extension module imports;
otherwise the pure-Python backend takes over.  ``NGPKIT_BACKEND=python``
forces the fallback (useful for benchmarking and debugging).  Both
backends implement the same functions with identical results.
"""

import os

from . import _pykern

try:
    from . import _ckern
except ImportError:
    _ckern = None

if os.environ.get("NGPKIT_BACKEND") == "python" or _ckern is None:
    active = _pykern
else:
    active = _ckern

BACKEND = active.BACKEND_NAME

OP_LOAD = _pykern.OP_LOAD
OP_NOT = _pykern.OP_NOT
OP_AND = _pykern.OP_AND
OP_OR = _pykern.OP_OR
SCAN_ALL = _pykern.SCAN_ALL
SCAN_MEMBER = _pykern.SCAN_MEMBER
SCAN_NONMEMBER = _pykern.SCAN_NONMEMBER

wmc = active.wmc
wmc_gradient = active.wmc_gradient
scan_select = active.scan_select

# the lazy generator form is only needed at Python level (multi-slot merges)
product_stream = _pykern.product_stream


def available_backends():
    """Name -> module for every importable backend."""
    backends = {"python": _pykern}
    if _ckern is not None:
        backends["cython"] = _ckern
    return backends
