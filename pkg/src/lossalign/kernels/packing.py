"""Flat parameter packing for the training kernels.

Kernels work on one contiguous float64 vector per child model instead of a
list of arrays, so the momentum update is a single loop and no per-call
buffer acquisition happens inside the hot path. Layout order per affine
layer: weight matrix in C order, then bias.
"""

from __future__ import annotations

import numpy as np

from ..engine.network import MLP
from ..exceptions import ShapeError

__all__ = ["layout_of", "param_count", "pack", "unpack"]


def layout_of(net: MLP) -> np.ndarray:
    """(layers, 2) int64 array of (fan_in, fan_out)."""
    return np.asarray([[w.shape[0], w.shape[1]] for w in net.weights], dtype=np.int64)


def param_count(layout: np.ndarray) -> int:
    return int(sum(ni * no + no for ni, no in layout))


def pack(net: MLP) -> np.ndarray:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unpack(theta: np.ndarray, net: MLP) -> None:
    """Write a flat vector back into the network's live arrays."""
    expected = param_count(layout_of(net))
    if theta.shape != (expected,):
        raise ShapeError(f"theta has shape {theta.shape}, expected ({expected},)")
    offset = 0
    for w, b in zip(net.weights, net.biases):
        n = w.size
        w[...] = theta[offset : offset + n].reshape(w.shape)
        offset += n
        b[...] = theta[offset : offset + b.size]
        offset += b.size
