"""Evaluation metrics, the discounted cumulative metric, and the quantized
reward.

All metrics report their natural orientation (error down, AUCPR/recall/
accuracy up); ``to_error`` maps any of them to lower-is-better form in
[0, 1] before discounting and reward quantization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, ShapeError, UsageError

METRIC_KINDS = (
    "classification-error",
    "aucpr",
    "recall-at-k",
    "verification-accuracy",
)
REWARD_SOURCES = (
    "validation-metric",
    "validation-loss",
    "training-metric",
    "training-loss",
)

__all__ = [
    "METRIC_KINDS",
    "REWARD_SOURCES",
    "MetricSpec",
    "classification_error",
    "aucpr",
    "aucpr_multiclass",
    "recall_at_k",
    "verification_accuracy",
    "verification_from_embeddings",
    "pairwise_distances",
    "to_error",
    "discounted_metric",
    "reward",
]


def classification_error(probs, labels) -> float:
    """Fraction misclassified by argmax; ties go to the lowest class index."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise UsageError("probs must be a nonempty (n, classes) matrix")
    if labels.shape != (probs.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} != ({probs.shape[0]},)")
    predicted = probs.argmax(axis=1)
    return float((predicted != labels).mean())


def aucpr(scores, labels) -> float:
    """Average precision over the ranking by descending score.

    Ties are broken by original index (stable sort). With no positive labels
    the quantity is undefined and NaN is returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ShapeError("scores and labels must be equal-length vectors")
    n_pos = int(labels.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    cum_pos = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    precision = cum_pos / ranks
    return float(precision[hits].sum() / n_pos)


def aucpr_multiclass(probs, labels) -> float:
    """Macro one-vs-rest average precision; classes with no positives are
    skipped."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise ShapeError("probs must be a (n, classes) matrix")
    values = []
    for c in range(probs.shape[1]):
        if (labels == c).any():
            values.append(aucpr(probs[:, c], labels == c))
    if not values:
        return float("nan")
    return float(np.mean(values))


def pairwise_distances(embeddings: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix, clipped at 0 against rounding."""
    e = np.asarray(embeddings, dtype=np.float64)
    sq = (e * e).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (e @ e.T)
    return np.sqrt(np.maximum(d2, 0.0))


def recall_at_k(embeddings, labels, k: int) -> float:
    """Fraction of queries whose k nearest neighbors (self excluded,
    distance ties by index) contain a same-class item.

    Queries whose class has no other member can never succeed and are
    excluded from the denominator.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = embeddings.shape[0]
    if k >= n:
        raise UsageError(f"k={k} must be smaller than the sample count {n}")
    if k < 1:
        raise UsageError("k must be >= 1")
    dist = pairwise_distances(embeddings)
    np.fill_diagonal(dist, np.inf)
    hits = 0
    queries = 0
    for q in range(n):
        if (labels == labels[q]).sum() < 2:
            continue
        queries += 1
        neighbors = np.argsort(dist[q], kind="stable")[:k]
        if (labels[neighbors] == labels[q]).any():
            hits += 1
    if queries == 0:
        raise UsageError("no query has a same-class partner")
    return hits / queries


def verification_accuracy(pair_distances, same_flags) -> float:
    """Best accuracy of "same iff distance < tau" over all thresholds.

    Candidate thresholds are the midpoints of the sorted distances plus
    -inf and +inf, which cover every achievable prediction pattern.
    """
    d = np.asarray(pair_distances, dtype=np.float64)
    same = np.asarray(same_flags).astype(bool)
    if d.ndim != 1 or d.shape != same.shape:
        raise ShapeError("distances and flags must be equal-length vectors")
    if d.size == 0:
        raise UsageError("need at least one pair")
    s = np.sort(d)
    thresholds = np.concatenate(([-np.inf], (s[:-1] + s[1:]) / 2.0, [np.inf]))
    best = 0.0
    for tau in thresholds:
        best = max(best, float(((d < tau) == same).mean()))
    return best


def verification_from_embeddings(embeddings, labels) -> float:
    """verification_accuracy over all distinct pairs of the sample."""
    labels = np.asarray(labels)
    dist = pairwise_distances(embeddings)
    iu = np.triu_indices(len(labels), k=1)
    return verification_accuracy(dist[iu], labels[iu[0]] == labels[iu[1]])


def to_error(value: float, kind: str) -> float:
    """Map a natural-orientation metric value to lower-is-better in [0, 1]."""
    if kind not in METRIC_KINDS:
        raise UsageError(f"unknown metric kind {kind!r}")
    if kind == "classification-error":
        return float(value)
    return float(1.0 - value)


def discounted_metric(series, gamma: float) -> float:
    """Recency-weighted sum sum_j gamma^(L-j) * m_j over L evaluation points.

    gamma=0 keeps only the last value (0^0 = 1).
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size == 0:
        raise UsageError("series must be a nonempty vector")
    exponents = np.arange(series.size - 1, -1, -1, dtype=np.float64)
    return float((np.asarray(gamma, dtype=np.float64) ** exponents * series).sum())


def reward(m_before: float, m_after: float) -> int:
    """Quantized improvement signal: sign(m_before - m_after), ties give 0."""
    if m_before > m_after:
        return 1
    if m_before < m_after:
        return -1
    return 0


@dataclass
class MetricSpec:
    """What to measure and where the reward signal comes from."""

    kind: str = "classification-error"
    k: tuple[int, ...] = (1,)
    reward_source: str = "validation-metric"

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise InputError(f"unknown metric kind {self.kind!r}")
        if self.reward_source not in REWARD_SOURCES:
            raise InputError(f"unknown reward source {self.reward_source!r}")
        self.k = tuple(int(x) for x in self.k)
        if self.kind == "recall-at-k" and (not self.k or any(x < 1 for x in self.k)):
            raise InputError("recall-at-k needs at least one k >= 1")

    def compute(self, outputs, labels) -> float:
        """Natural-orientation value; outputs are probabilities for
        classification kinds and embeddings for the retrieval kinds."""
        if self.kind == "classification-error":
            return classification_error(outputs, labels)
        if self.kind == "aucpr":
            outputs = np.asarray(outputs, dtype=np.float64)
            if outputs.ndim == 2 and outputs.shape[1] == 2:
                return aucpr(outputs[:, 1], np.asarray(labels) == 1)
            return aucpr_multiclass(outputs, labels)
        if self.kind == "recall-at-k":
            return recall_at_k(outputs, labels, self.k[0])
        return verification_from_embeddings(outputs, labels)

    def error(self, outputs, labels) -> float:
        return to_error(self.compute(outputs, labels), self.kind)
