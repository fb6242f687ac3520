"""Pick the compiled simulation core when available.

Set ``ENDOTREE_BACKEND=python`` to force the pure-Python kernels.
"""

import os

from . import _pycore

BACKEND = "python"
core = _pycore

if os.environ.get("ENDOTREE_BACKEND", "").lower() != "python":
    try:
        from . import _core
    except ImportError:
        pass
    else:
        core = _core
        BACKEND = "cython"


def get(name: str | None = None):
    """Kernel module by name (``"cython"``/``"python"``), default the active one."""
    if name is None:
        return core
    if name == "python":
        return _pycore
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
