"""Kernel backend selection.

The compiled extension is preferred; ``DAAMPC_BACKEND`` may be set to
``pure`` or ``compiled`` to force one.
"""
import os
from types import ModuleType

from . import _purecore

try:
    from . import _fastcore
except ImportError:  # extension not built
    _fastcore = None

BACKENDS: dict[str, ModuleType] = {"pure": _purecore}
if _fastcore is not None:
    BACKENDS["compiled"] = _fastcore


def get_backend(name: str | None = None) -> ModuleType:
    name = name or os.environ.get("DAAMPC_BACKEND", "auto")
    if name == "auto":
        return BACKENDS.get("compiled", _purecore)
    try:
        return BACKENDS[name]
    except KeyError:
        raise ImportError(f"kernel backend {name!r} is not available") from None


kernels = get_backend()
