"""Multi-scale state-space/attention forecaster with a from-scratch autodiff core."""

from . import tensor  # noqa: F401

__version__ = "0.1.0"
