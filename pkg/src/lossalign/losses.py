"""Parametric loss families adjusted by the controller, fixed baseline
losses, and the validation confusion matrix.

Three parameterization modes:

* ``class-correlation`` -- Phi is a |Y|x|Y| symmetric matrix mixing
  per-class log-probabilities inside a sigmoid; identity Phi recovers a
  monotone transform of cross-entropy.
* ``distance-mixture``  -- Phi weights ten fixed distance curves, five
  penalizing large positive-pair distances and five penalizing small
  negative-pair distances.
* ``focal-weighting``   -- Phi is a pair of softmax-like scale factors on
  positive and negative pair terms around a distance offset alpha.

Every loss has a plain numpy form (used by the training kernels and tests)
and a ``*_graph`` form built on autodiff nodes for gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine.graph import Value, as_value
from .exceptions import InputError, ShapeError, UsageError

PROB_EPS = 1e-7
DISTANCE_FLOOR = 1e-4

MODES = ("class-correlation", "distance-mixture", "focal-weighting")

__all__ = [
    "MODES",
    "PROB_EPS",
    "DISTANCE_FLOOR",
    "clamp_probs",
    "ala_classification_loss",
    "ala_classification_loss_graph",
    "cross_entropy_loss",
    "cross_entropy_loss_graph",
    "ConfusionMatrix",
    "confusion_matrix",
    "triplet_loss",
    "triplet_loss_graph",
    "DistanceFunctionBank",
    "DEFAULT_BANK",
    "distance_mixture_loss",
    "distance_mixture_loss_graph",
    "default_distance_loss",
    "focal_weighting_loss",
    "focal_weighting_loss_graph",
    "LossParameterization",
    "initial_values",
]


def clamp_probs(p: np.ndarray) -> np.ndarray:
    """Clamp probabilities away from 0 and 1 before taking logs."""
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _as_prob_matrix(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2:
        raise ShapeError(f"probabilities must be 1-D or 2-D, got ndim={p.ndim}")
    return p


def _as_onehot(labels, n_classes: int) -> np.ndarray:
    """Accept integer labels or one-hot rows; reject anything else."""
    y = np.asarray(labels)
    if y.ndim <= 1 and np.issubdtype(y.dtype, np.integer):
        y = np.atleast_1d(y)
        if ((y < 0) | (y >= n_classes)).any():
            raise InputError(f"label out of range for {n_classes} classes")
        return np.eye(n_classes)[y]
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[1] != n_classes:
        raise ShapeError(f"one-hot width {y.shape[1]} != class count {n_classes}")
    if not np.isin(y, (0.0, 1.0)).all() or not (y.sum(axis=1) == 1.0).all():
        raise InputError("label is not one-hot")
    return y


# -- classification losses -----------------------------------------------------


def ala_classification_loss(probs, labels, phi: np.ndarray) -> float:
    """-sigmoid(y^T Phi log p), averaged over the batch.

    ``phi`` rows mix log-probabilities of all classes into the true class's
    score, so correlated classes share credit. Values lie in (-1, 0).
    """
    p = _as_prob_matrix(probs)
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (p.shape[1], p.shape[1]):
        raise ShapeError(f"phi shape {phi.shape} != ({p.shape[1]}, {p.shape[1]})")
    y = _as_onehot(labels, p.shape[1])
    if y.shape[0] != p.shape[0]:
        raise ShapeError(f"{y.shape[0]} labels for {p.shape[0]} samples")
    logp = np.log(clamp_probs(p))
    scores = ((y @ phi) * logp).sum(axis=1)
    return float(-_sigmoid(scores).mean())


def ala_classification_loss_graph(probs: Value, labels, phi: np.ndarray) -> Value:
    phi = np.asarray(phi, dtype=np.float64)
    y = _as_onehot(labels, probs.shape[1])
    logp = probs.clip(PROB_EPS, 1.0 - PROB_EPS).log()
    scores = (logp * (y @ phi)).sum(axis=1)
    return -(scores.sigmoid().mean())


def cross_entropy_loss(probs, labels) -> float:
    """-log p_y, averaged over the batch."""
    p = _as_prob_matrix(probs)
    y = _as_onehot(labels, p.shape[1])
    if y.shape[0] != p.shape[0]:
        raise ShapeError(f"{y.shape[0]} labels for {p.shape[0]} samples")
    logp = np.log(clamp_probs(p))
    return float(-(y * logp).sum(axis=1).mean())


def cross_entropy_loss_graph(probs: Value, labels) -> Value:
    y = _as_onehot(labels, probs.shape[1])
    logp = probs.clip(PROB_EPS, 1.0 - PROB_EPS).log()
    return -((logp * y).sum(axis=1).mean())


@dataclass
class ConfusionMatrix:
    """Mean negative log-probability of class j over validation samples of
    class i; rows of classes absent from the sample are zero and flagged."""

    matrix: np.ndarray
    counts: np.ndarray

    @property
    def absent(self) -> np.ndarray:
        return self.counts == 0


def confusion_matrix(probs, labels, num_classes: int) -> ConfusionMatrix:
    p = _as_prob_matrix(probs)
    if p.shape[1] != num_classes:
        raise ShapeError(f"probs have {p.shape[1]} columns for {num_classes} classes")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != p.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match {p.shape[0]} samples")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError("labels must be integer class indices")
    if ((labels < 0) | (labels >= num_classes)).any():
        raise InputError(f"label out of range for {num_classes} classes")
    neglog = -np.log(clamp_probs(p))
    matrix = np.zeros((num_classes, num_classes))
    counts = np.zeros(num_classes, dtype=np.int64)
    for i in range(num_classes):
        rows = labels == i
        counts[i] = int(rows.sum())
        if counts[i] > 0:
            matrix[i] = neglog[rows].mean(axis=0)
    return ConfusionMatrix(matrix=matrix, counts=counts)


# -- metric-learning losses ----------------------------------------------------


def _as_distances(d, name: str) -> np.ndarray:
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    if (d < 0).any():
        raise InputError(f"{name} contains negative distances")
    return d


def triplet_loss(d_plus, d_minus, margin: float = 0.2) -> float:
    """max(0, d_plus^2 - d_minus^2 + margin), averaged over triplets."""
    dp = _as_distances(d_plus, "d_plus")
    dn = _as_distances(d_minus, "d_minus")
    if dp.shape != dn.shape:
        raise ShapeError(f"d_plus shape {dp.shape} != d_minus shape {dn.shape}")
    return float(np.maximum(0.0, dp**2 - dn**2 + margin).mean())


def triplet_loss_graph(d_plus: Value, d_minus: Value, margin: float = 0.2) -> Value:
    return ((d_plus**2 - d_minus**2) + margin).relu().mean()


class DistanceFunctionBank:
    """Ten fixed curves of pair distance: indices 0-4 grow with d (applied
    to positive pairs), 5-9 shrink with d (applied to negative pairs)."""

    size = 10
    labels = (
        "d^2",
        "d^2.5",
        "d^1.5",
        "0.5*exp(0.6*d^2)-0.5",
        "0.5*exp(0.6*d)-0.5",
        "0.5/d",
        "0.2/d",
        "0.1/d^2",
        "log(1/d)",
        "log(1/d^2)",
    )

    def value(self, i: int, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        if i == 0:
            return d**2
        if i == 1:
            return d**2.5
        if i == 2:
            return d**1.5
        if i == 3:
            return 0.5 * np.exp(0.6 * d**2) - 0.5
        if i == 4:
            return 0.5 * np.exp(0.6 * d) - 0.5
        if i == 5:
            return 0.5 / d
        if i == 6:
            return 0.2 / d
        if i == 7:
            return 0.1 / d**2
        if i == 8:
            return -np.log(d)
        if i == 9:
            return -2.0 * np.log(d)
        raise UsageError(f"bank index {i} out of range [0, 10)")

    def derivative(self, i: int, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        if i == 0:
            return 2.0 * d
        if i == 1:
            return 2.5 * d**1.5
        if i == 2:
            return 1.5 * d**0.5
        if i == 3:
            return 0.6 * d * np.exp(0.6 * d**2)
        if i == 4:
            return 0.3 * np.exp(0.6 * d)
        if i == 5:
            return -0.5 / d**2
        if i == 6:
            return -0.2 / d**2
        if i == 7:
            return -0.2 / d**3
        if i == 8:
            return -1.0 / d
        if i == 9:
            return -2.0 / d
        raise UsageError(f"bank index {i} out of range [0, 10)")

    def value_graph(self, i: int, d: Value) -> Value:
        if i == 0:
            return d**2
        if i == 1:
            return d**2.5
        if i == 2:
            return d**1.5
        if i == 3:
            return (d**2 * 0.6).exp() * 0.5 - 0.5
        if i == 4:
            return (d * 0.6).exp() * 0.5 - 0.5
        if i == 5:
            return 0.5 / d
        if i == 6:
            return 0.2 / d
        if i == 7:
            return 0.1 / d**2
        if i == 8:
            return -(d.log())
        if i == 9:
            return d.log() * -2.0
        raise UsageError(f"bank index {i} out of range [0, 10)")


DEFAULT_BANK = DistanceFunctionBank()


def _check_mixture_phi(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (10,):
        raise ShapeError(f"mixture phi must have shape (10,), got {phi.shape}")
    return phi


def distance_mixture_loss(
    d_plus,
    d_minus,
    phi,
    bank: DistanceFunctionBank = DEFAULT_BANK,
    clamp_events: list | None = None,
) -> float:
    """Phi-weighted sum of bank curves, averaged over pairs.

    Distances below 1e-4 are floored before the decreasing curves, which are
    singular at 0; ``clamp_events`` (if given) records how many were floored.
    """
    phi = _check_mixture_phi(phi)
    dp = _as_distances(d_plus, "d_plus")
    dn = _as_distances(d_minus, "d_minus")
    n_floored = int((dn < DISTANCE_FLOOR).sum())
    if n_floored and clamp_events is not None:
        clamp_events.append(n_floored)
    dn = np.maximum(dn, DISTANCE_FLOOR)
    # the two sums are independent, so the pair populations may differ in
    # size; each side is averaged over its own population
    pos = np.zeros_like(dp)
    for i in range(5):
        pos = pos + phi[i] * bank.value(i, dp)
    neg = np.zeros_like(dn)
    for i in range(5):
        neg = neg + phi[i + 5] * bank.value(i + 5, dn)
    return float(pos.mean() + neg.mean())


def distance_mixture_loss_graph(
    d_plus: Value, d_minus: Value, phi, bank: DistanceFunctionBank = DEFAULT_BANK
) -> Value:
    phi = _check_mixture_phi(phi)
    dn = d_minus.clip(DISTANCE_FLOOR, np.inf)
    pos = as_value(np.zeros(d_plus.shape))
    for i in range(5):
        pos = pos + bank.value_graph(i, d_plus) * phi[i]
    neg = as_value(np.zeros(dn.shape))
    for i in range(5):
        neg = neg + bank.value_graph(i + 5, dn) * phi[i + 5]
    return pos.mean() + neg.mean()


def default_distance_loss(d_plus, d_minus) -> float:
    """The starting selection written out directly: d^2 + 0.5/d.

    Deliberately does not go through the mixture machinery. The mixture
    loss at its initial weights must reduce to exactly this arithmetic
    (zero-weighted curves contribute nothing, unit weights multiply
    exactly), and keeping this expression independent is what makes that
    reduction checkable bit for bit.
    """
    dp = _as_distances(d_plus, "d_plus")
    dn = _as_distances(d_minus, "d_minus")
    dn = np.maximum(dn, DISTANCE_FLOOR)
    return float((dp**2).mean() + (0.5 / dn).mean())


def focal_weighting_loss(d_plus_list, d_minus_list, phi, alpha: float = 1.0) -> float:
    """Soft count of positive pairs beyond alpha and negative pairs inside it.

    (1/phi1)*log[1 + sum exp(phi1*(d+ - alpha))] +
    (1/phi2)*log[1 + sum exp(-phi2*(d- - alpha))]

    Larger scales sharpen the focus onto the hardest pairs. Empty lists
    contribute log(1) = 0.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (2,):
        raise ShapeError(f"focal phi must have shape (2,), got {phi.shape}")
    dp = _as_distances(d_plus_list, "d_plus_list") if np.size(d_plus_list) else None
    dn = _as_distances(d_minus_list, "d_minus_list") if np.size(d_minus_list) else None
    total = 0.0
    if dp is not None:
        total += np.log1p(np.exp(phi[0] * (dp - alpha)).sum()) / phi[0]
    if dn is not None:
        total += np.log1p(np.exp(-phi[1] * (dn - alpha)).sum()) / phi[1]
    return float(total)


def focal_weighting_loss_graph(
    d_plus: Value | None, d_minus: Value | None, phi, alpha: float = 1.0
) -> Value:
    phi = np.asarray(phi, dtype=np.float64)
    total = as_value(0.0)
    if d_plus is not None and d_plus.data.size:
        s = ((d_plus - alpha) * phi[0]).exp().sum()
        total = total + (s + 1.0).log() * (1.0 / phi[0])
    if d_minus is not None and d_minus.data.size:
        s = ((d_minus - alpha) * (-phi[1])).exp().sum()
        total = total + (s + 1.0).log() * (1.0 / phi[1])
    return total


# -- the adjustable parameter container ------------------------------------------


def initial_values(mode: str, num_classes: int | None = None) -> np.ndarray:
    """Starting Phi: identity matrix, the d^2 + 0.5/d selection, or unit scales."""
    if mode == "class-correlation":
        if num_classes is None or num_classes < 2:
            raise UsageError("class-correlation mode needs num_classes >= 2")
        return np.eye(num_classes)
    if mode == "distance-mixture":
        phi = np.zeros(10)
        phi[0] = 1.0
        phi[5] = 1.0
        return phi
    if mode == "focal-weighting":
        return np.ones(2)
    raise UsageError(f"unknown mode {mode!r}, expected one of {MODES}")


FOCAL_BOUNDS = (0.1, 10.0)


class LossParameterization:
    """Current Phi for one child model, with per-mode update and bound rules.

    Class-correlation actions address unordered pairs "i:j" (i < j) and write
    both entries; the diagonal is frozen at 1. Mixture weights live in [0,1],
    focal scales in [0.1, 10].
    """

    def __init__(
        self,
        mode: str,
        num_classes: int | None = None,
        alpha: float = 1.0,
        margin: float = 0.2,
    ):
        self.mode = mode
        self.num_classes = num_classes
        self.alpha = float(alpha)
        self.margin = float(margin)
        self.values = initial_values(mode, num_classes)

    def copy(self) -> "LossParameterization":
        dup = LossParameterization.__new__(LossParameterization)
        dup.mode = self.mode
        dup.num_classes = self.num_classes
        dup.alpha = self.alpha
        dup.margin = self.margin
        dup.values = self.values.copy()
        return dup

    def parameter_ids(self) -> list[str]:
        if self.mode == "class-correlation":
            n = self.values.shape[0]
            return [f"{i}:{j}" for i in range(n) for j in range(i + 1, n)]
        if self.mode == "distance-mixture":
            return [f"m{i}" for i in range(10)]
        return ["fpos", "fneg"]

    def _pair(self, param_id: str) -> tuple[int, int]:
        try:
            i, j = (int(part) for part in param_id.split(":"))
        except ValueError:
            raise UsageError(f"bad class-pair id {param_id!r}") from None
        n = self.values.shape[0]
        if not (0 <= i < n and 0 <= j < n):
            raise UsageError(f"pair id {param_id!r} out of range for {n} classes")
        if i == j:
            raise UsageError(f"pair id {param_id!r} addresses the frozen diagonal")
        return i, j

    def _index(self, param_id: str) -> int:
        if self.mode == "distance-mixture":
            if param_id.startswith("m"):
                try:
                    k = int(param_id[1:])
                except ValueError:
                    k = -1
                if 0 <= k < 10:
                    return k
            raise UsageError(f"bad mixture weight id {param_id!r}")
        if param_id == "fpos":
            return 0
        if param_id == "fneg":
            return 1
        raise UsageError(f"bad focal scale id {param_id!r}")

    def value_of(self, param_id: str) -> float:
        if self.mode == "class-correlation":
            i, j = self._pair(param_id)
            return float(self.values[i, j])
        return float(self.values[self._index(param_id)])

    def apply_action(self, param_id: str, delta: float) -> None:
        """Add delta to one parameter, then clip to the mode's bounds."""
        if self.mode == "class-correlation":
            i, j = self._pair(param_id)
            v = float(np.clip(self.values[i, j] + delta, -1.0, 1.0))
            self.values[i, j] = v
            self.values[j, i] = v
            return
        k = self._index(param_id)
        if self.mode == "distance-mixture":
            self.values[k] = float(np.clip(self.values[k] + delta, 0.0, 1.0))
        else:
            self.values[k] = float(np.clip(self.values[k] + delta, *FOCAL_BOUNDS))

    def set_values(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ShapeError(f"values shape {values.shape} != {self.values.shape}")
        self.values = values.copy()
        self.validate()

    def validate(self) -> None:
        """Raise InputError if the mode's invariants are violated."""
        v = self.values
        if not np.isfinite(v).all():
            raise InputError("loss parameters contain NaN or Inf")
        if self.mode == "class-correlation":
            if not (np.diag(v) == 1.0).all():
                raise InputError("class-correlation diagonal must be exactly 1")
            if not (v == v.T).all():
                raise InputError("class-correlation matrix must be symmetric")
            off = v[~np.eye(v.shape[0], dtype=bool)]
            if ((off < -1.0) | (off > 1.0)).any():
                raise InputError("class-correlation off-diagonals must lie in [-1, 1]")
        elif self.mode == "distance-mixture":
            if ((v < 0.0) | (v > 1.0)).any():
                raise InputError("mixture weights must lie in [0, 1]")
        else:
            if ((v < FOCAL_BOUNDS[0]) | (v > FOCAL_BOUNDS[1])).any():
                raise InputError(f"focal scales must lie in {FOCAL_BOUNDS}")

    def snapshot(self) -> np.ndarray:
        return self.values.copy()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "num_classes": self.num_classes,
            "alpha": self.alpha,
            "margin": self.margin,
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LossParameterization":
        obj = cls(
            doc["mode"],
            num_classes=doc.get("num_classes"),
            alpha=doc.get("alpha", 1.0),
            margin=doc.get("margin", 0.2),
        )
        obj.set_values(np.asarray(doc["values"], dtype=np.float64).reshape(obj.values.shape))
        return obj
