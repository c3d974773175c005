"""Kernel backend selection.

The compiled extension is used when it imports; setting ``SGPDF_PURE=1``
forces the NumPy fallback.
"""
from __future__ import annotations

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("SGPDF_PURE", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError as exc:  # pragma: no cover - depends on the build
        log.debug("compiled kernels unavailable (%s); using NumPy fallback", exc)
        _compiled = None

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

DEFAULT = "compiled" if _compiled is not None else "python"


def get(name: str | None = None):
    """Kernel module by name; ``None`` returns the default backend."""
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        from .errors import ConfigurationError

        raise ConfigurationError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None
