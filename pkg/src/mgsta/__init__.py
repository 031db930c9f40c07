"""Gain synthesis, certificate checks and closed-loop simulation for the
multivariable generalized super-twisting controller on polytopic plants."""

__version__ = "0.1.0"

from . import analysis, lmi, model, sdp, sim, synthesis, trailer  # noqa: E402
from .errors import MgstaError  # noqa: E402

__all__ = ["analysis", "lmi", "model", "sdp", "sim", "synthesis", "trailer", "MgstaError", "__version__"]
