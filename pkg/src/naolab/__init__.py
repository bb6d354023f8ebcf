"""naolab: nonlocal attention operators for joint forward/inverse kernel learning."""

from .core import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
