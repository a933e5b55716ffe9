"""Stochastic reduction of diffusions on principal fiber bundles."""
__version__ = "0.1.0"

from .errors import FibrilError  # noqa: E402,F401
