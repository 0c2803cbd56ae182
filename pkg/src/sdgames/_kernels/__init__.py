"""Hot-loop kernels: compiled extension when available, numpy fallback otherwise.

The two implementations are arithmetic-identical (same per-element expression
trees, same reduction semantics, extension built with FP contraction off), so
selecting a backend never changes results bit-for-bit.  Selection happens at
import; set ``SDGAMES_BACKEND=python`` or ``=compiled`` to force one.
"""

from __future__ import annotations

import os

from . import pykernels

try:
    from . import _core  # compiled extension, optional

    _HAVE_COMPILED = True
except ImportError:
    _core = None
    _HAVE_COMPILED = False

_requested = os.environ.get("SDGAMES_BACKEND", "auto").lower()
if _requested not in ("auto", "python", "compiled"):
    raise RuntimeError(f"SDGAMES_BACKEND must be auto|python|compiled, got {_requested!r}")
if _requested == "compiled" and not _HAVE_COMPILED:
    raise RuntimeError("SDGAMES_BACKEND=compiled but the extension is not built")

_use_compiled = _HAVE_COMPILED and _requested != "python"

BACKEND = "compiled" if _use_compiled else "python"
HAVE_COMPILED = _HAVE_COMPILED

_impl = _core if _use_compiled else pykernels

minimax_apply = _impl.minimax_apply
ratio_apply = _impl.ratio_apply
gs_sweep = _impl.gs_sweep
euler_affine_block = _impl.euler_affine_block
euler_aug_affine_block = _impl.euler_aug_affine_block
accumulate_payoff = _impl.accumulate_payoff
accumulate_weighted = _impl.accumulate_weighted


def backend_info() -> dict:
    return {"backend": BACKEND, "compiled_available": HAVE_COMPILED}
