"""Reference differentiation engine: tape autodiff, networks, optimizers."""

from .graph import Value, as_value, gradients, topo_order
from .network import HEADS, MLP
from .optim import MomentumSGD, RMSProp

__all__ = [
    "Value",
    "as_value",
    "gradients",
    "topo_order",
    "MLP",
    "HEADS",
    "MomentumSGD",
    "RMSProp",
]
