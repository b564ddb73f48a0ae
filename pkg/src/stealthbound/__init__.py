"""Attack-time safety bounds for LQG loops with a chi-squared residue detector."""

__version__ = "0.1.0"

from .errors import StealthBoundError  # noqa: E402,F401
