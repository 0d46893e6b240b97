"""Extension-projection networks."""

from .layers import Coupling, InvLinear, Layer, ZeroPad
from .network import EPNetwork, Inversion

__all__ = ["Coupling", "EPNetwork", "InvLinear", "Inversion", "Layer", "ZeroPad"]
