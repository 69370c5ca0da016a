"""Small fully connected networks used for child models.

A network is a stack of affine layers with ReLU between them and a head on
the last layer's output:

* ``"softmax"``  -- class probabilities (rows sum to 1)
* ``"l2"``       -- rows scaled to unit Euclidean norm (embeddings)
* ``"linear"``   -- raw affine output

Parameters live as plain float64 arrays so the training kernels can pack
them into a flat vector; ``forward_graph`` rebuilds the same computation on
autodiff nodes when gradients of a full loss expression are needed.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import CheckpointError, InputError, ShapeError, UsageError
from ..serialization import read_checkpoint, write_checkpoint
from .graph import Value

HEADS = ("softmax", "l2", "linear")

__all__ = ["MLP", "HEADS"]


class MLP:
    """Affine/ReLU stack with a configurable output head."""

    def __init__(self, in_dim: int, hidden: list[int], out_dim: int, head: str, rng=None):
        if head not in HEADS:
            raise UsageError(f"unknown head {head!r}, expected one of {HEADS}")
        if in_dim < 1 or out_dim < 1 or any(h < 1 for h in hidden):
            raise UsageError("layer sizes must be positive")
        self.in_dim = int(in_dim)
        self.hidden = [int(h) for h in hidden]
        self.out_dim = int(out_dim)
        self.head = head
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        dims = [self.in_dim] + self.hidden + [self.out_dim]
        if rng is None:
            rng = np.random.default_rng(0)
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    # -- parameter access ----------------------------------------------------

    def params(self) -> list[np.ndarray]:
        """Live parameter arrays, interleaved [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def param_names(self) -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out.append(f"w{i}")
            out.append(f"b{i}")
        return out

    def set_params(self, arrays: list[np.ndarray]) -> None:
        current = self.params()
        if len(arrays) != len(current):
            raise ShapeError(f"expected {len(current)} arrays, got {len(arrays)}")
        for dst, src in zip(current, arrays):
            if dst.shape != np.shape(src):
                raise ShapeError(f"parameter shape {np.shape(src)} != {dst.shape}")
            dst[...] = src

    def copy(self) -> "MLP":
        dup = MLP.__new__(MLP)
        dup.in_dim = self.in_dim
        dup.hidden = list(self.hidden)
        dup.out_dim = self.out_dim
        dup.head = self.head
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    # -- forward passes --------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"input must be 2-D (batch, features), got ndim={x.ndim}")
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"input has {x.shape[1]} features, network expects {self.in_dim}")
        if not np.isfinite(x).all():
            raise InputError("input contains NaN or Inf")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Head output for a batch; softmax head returns probabilities."""
        h = self._check_input(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0.0, out=h)
        if self.head == "softmax":
            h = h - h.max(axis=1, keepdims=True)
            np.exp(h, out=h)
            h /= h.sum(axis=1, keepdims=True)
            return h
        if self.head == "l2":
            norms = np.sqrt((h * h).sum(axis=1, keepdims=True))
            return h / np.maximum(norms, 1e-12)
        return h

    def forward_graph(self, x: np.ndarray) -> tuple[Value, list[Value]]:
        """Forward pass on autodiff nodes; returns (output, parameter nodes)."""
        x = self._check_input(x)
        pvals = [Value(p) for p in self.params()]
        h: Value = Value(x)
        last = len(self.weights) - 1
        for i in range(len(self.weights)):
            h = h @ pvals[2 * i] + pvals[2 * i + 1]
            if i < last:
                h = h.relu()
        if self.head == "softmax":
            h = h.log_softmax().exp()
        elif self.head == "l2":
            h = h.l2_normalize_rows()
        return h, pvals

    # -- persistence -------------------------------------------------------------

    def save(self, path: str) -> None:
        meta = {
            "kind": "mlp",
            "in_dim": self.in_dim,
            "hidden": self.hidden,
            "out_dim": self.out_dim,
            "head": self.head,
        }
        tensors = dict(zip(self.param_names(), self.params()))
        write_checkpoint(path, meta, tensors)

    @classmethod
    def load(cls, path: str) -> "MLP":
        meta, tensors = read_checkpoint(path)
        if meta.get("kind") != "mlp":
            raise CheckpointError(f"not a network checkpoint: {path}")
        net = cls(meta["in_dim"], list(meta["hidden"]), meta["out_dim"], meta["head"])
        arrays = []
        for name, current in zip(net.param_names(), net.params()):
            if name not in tensors:
                raise CheckpointError(f"checkpoint missing tensor {name!r}: {path}")
            if tensors[name].shape != current.shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {tensors[name].shape}, "
                    f"expected {current.shape}: {path}"
                )
            arrays.append(tensors[name])
        net.set_params(arrays)
        return net
