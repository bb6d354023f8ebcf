"""Backend selection for the hot kernels.

The compiled ``_core`` extension is used when it was built; otherwise the
pure-Python ``_core_py`` takes over.  Setting ``NAOLAB_BACKEND=python`` forces
the fallback (the benchmark and the backend-agreement tests use this).
"""

import os

from . import _core_py

if os.environ.get("NAOLAB_BACKEND", "").lower() == "python":
    _impl = _core_py
    BACKEND = "python"
else:
    try:
        from . import _core as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _core_py
        BACKEND = "python"

kernel_values = _impl.kernel_values
input_values = _impl.input_values
g_tokens = _impl.g_tokens
radial_operator = _impl.radial_operator


def backends():
    """Available backend modules keyed by name (python always present)."""
    out = {"python": _core_py}
    try:
        from . import _core
        out["cython"] = _core
    except ImportError:
        pass
    return out
