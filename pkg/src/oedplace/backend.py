"""Selection-kernel backend dispatch.

The greedy searches spend their time in small dense log-det / trace kernels;
those exist twice, as compiled Cython (``oedplace._core``) and as pure numpy
(``oedplace._core_py``) with identical interfaces.  The compiled module is
preferred when importable.  Set ``OEDPLACE_BACKEND=pure`` or
``OEDPLACE_BACKEND=compiled`` to force a choice (forcing an unavailable
compiled backend raises at import).
"""

from __future__ import annotations

import os

from .errors import ValidationError
from . import _core_py

try:
    from . import _core
except ImportError:  # extension not built; pure fallback
    _core = None

__all__ = ["KERNELS", "BACKEND", "available_backends", "get_kernels"]

_forced = os.environ.get("OEDPLACE_BACKEND", "").strip().lower()
if _forced == "pure":
    KERNELS = _core_py
elif _forced == "compiled":
    if _core is None:
        raise ImportError(
            "OEDPLACE_BACKEND=compiled but the oedplace._core extension is not built"
        )
    KERNELS = _core
elif _forced:
    raise ImportError(f"unknown OEDPLACE_BACKEND value: {_forced!r}")
else:
    KERNELS = _core if _core is not None else _core_py

BACKEND = "compiled" if KERNELS is not _core_py else "pure"


def available_backends() -> dict:
    """Importable kernel modules keyed by name."""
    out = {"pure": _core_py}
    if _core is not None:
        out["compiled"] = _core
    return out


def get_kernels(name=None):
    """Kernel module by name (``None`` for the active default)."""
    if name is None:
        return KERNELS
    try:
        return available_backends()[name]
    except KeyError:
        raise ValidationError(
            f"backend {name!r} not available; have {sorted(available_backends())}"
        ) from None
