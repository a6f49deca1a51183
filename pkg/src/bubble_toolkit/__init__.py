"""Numerical checks for sign-changing multi-bubble solutions of the critical Yamabe equation."""

from .config import ConfigError, ProblemConfig, build_config
from .bubble import AtomSet, ansatz, bubble, rank_function
from .error_field import error_eval, error_field

__all__ = [
    "AtomSet",
    "ConfigError",
    "ProblemConfig",
    "ansatz",
    "bubble",
    "build_config",
    "error_eval",
    "error_field",
    "rank_function",
]

__version__ = "0.1.0"
