"""RotationOut numerics lab."""

from ._core import *  # noqa: F401,F403
from ._core import ConfigError, Error, NumericalError  # noqa: F401

__version__ = "0.3.0"
