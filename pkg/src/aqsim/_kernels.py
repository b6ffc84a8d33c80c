"""Kernel selection: compiled extension when present, numpy otherwise.

Set ``AQSIM_PURE=1`` to force the reference path (used by the
benchmark and by tests that compare both implementations).
"""

from __future__ import annotations

import os

from . import _kernels_ref

if os.environ.get("AQSIM_PURE"):
    _impl = _kernels_ref
    COMPILED = False
else:
    try:
        from . import _kernels_fast as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = _kernels_ref
        COMPILED = False

advance_reflect = _impl.advance_reflect
build_pairs = _impl.build_pairs
MAX_BOUNCES = _impl.MAX_BOUNCES
