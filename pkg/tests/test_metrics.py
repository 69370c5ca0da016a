"""Metric values against independently coded oracles."""

import numpy as np
import pytest

from lossalign.exceptions import InputError, ShapeError, UsageError
from lossalign.metrics import (
    METRIC_KINDS,
    MetricSpec,
    aucpr,
    aucpr_multiclass,
    classification_error,
    discounted_metric,
    pairwise_distances,
    recall_at_k,
    reward,
    to_error,
    verification_accuracy,
    verification_from_embeddings,
)

RNG = np.random.default_rng(23)


def aucpr_oracle(scores, labels):
    """Average precision by explicit walk down the ranking."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            hits += 1
            total += hits / rank
    return total / sum(labels)


def verification_oracle(distances, same):
    """Best split accuracy by trying every prefix of the sorted distances."""
    order = np.argsort(distances, kind="stable")
    best = 0.0
    for cut in range(len(distances) + 1):
        pred = np.zeros(len(distances), dtype=bool)
        pred[order[:cut]] = True
        best = max(best, float((pred == same).mean()))
    return best


def test_classification_error_basic():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
    assert classification_error(probs, np.array([0, 1, 1])) == pytest.approx(1 / 3)
    assert classification_error(probs, np.array([0, 1, 0])) == 0.0


def test_classification_error_tie_goes_to_lowest_index():
    probs = np.array([[0.5, 0.5]])
    assert classification_error(probs, np.array([0])) == 0.0
    assert classification_error(probs, np.array([1])) == 1.0


def test_classification_error_validation():
    with pytest.raises(UsageError):
        classification_error(np.empty((0, 2)), np.array([]))
    with pytest.raises(ShapeError):
        classification_error(np.ones((2, 2)), np.array([0]))


def test_aucpr_hand_example():
    got = aucpr([0.9, 0.8, 0.7], [1, 0, 1])
    assert got == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-12)


def test_aucpr_perfect_and_inverted():
    assert aucpr([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0
    got = aucpr([0.0, 0.1, 0.8, 0.9], [1, 1, 0, 0])
    # positives land at ranks 3 and 4
    assert got == pytest.approx((1.0 / 3.0 + 2.0 / 4.0) / 2.0, abs=1e-12)


def test_aucpr_no_positives_is_nan():
    assert np.isnan(aucpr([0.5, 0.2], [0, 0]))


def test_aucpr_ties_break_by_original_index():
    scores = [0.5, 0.5, 0.5]
    labels = [0, 1, 0]
    assert aucpr(scores, labels) == pytest.approx(aucpr_oracle(scores, labels))
    assert aucpr(scores, labels) == pytest.approx(1.0 / 2.0)


def test_aucpr_matches_oracle_on_random_instances():
    for _ in range(300):
        n = int(RNG.integers(1, 13))
        scores = np.round(RNG.uniform(0, 1, size=n), 2)  # force frequent ties
        labels = RNG.integers(0, 2, size=n)
        if labels.sum() == 0:
            labels[int(RNG.integers(0, n))] = 1
        got = aucpr(scores, labels)
        assert got == pytest.approx(aucpr_oracle(scores, labels), abs=1e-12)


def test_aucpr_multiclass_skips_absent_classes():
    probs = np.array([[0.7, 0.2, 0.1], [0.3, 0.6, 0.1]])
    labels = np.array([0, 1])  # class 2 absent
    per_class = [aucpr(probs[:, c], labels == c) for c in (0, 1)]
    assert aucpr_multiclass(probs, labels) == pytest.approx(np.mean(per_class))


def test_pairwise_distances_match_direct_loop():
    e = RNG.normal(size=(7, 4))
    d = pairwise_distances(e)
    assert d.shape == (7, 7)
    np.testing.assert_allclose(d, d.T, atol=1e-12)
    for i in range(7):
        for j in range(7):
            np.testing.assert_allclose(
                d[i, j], np.linalg.norm(e[i] - e[j]), atol=1e-9
            )
    assert (d >= 0).all()


def test_recall_at_k_hand_case():
    e = np.array([[0.0], [0.1], [5.0], [5.1]])
    labels = np.array([0, 0, 1, 1])
    assert recall_at_k(e, labels, 1) == 1.0
    mixed = np.array([0, 1, 0, 1])
    assert recall_at_k(e, mixed, 1) == 0.0
    assert recall_at_k(e, mixed, 3) == 1.0


def test_recall_at_k_excludes_singleton_queries():
    e = np.array([[0.0], [0.1], [9.0]])
    labels = np.array([0, 0, 1])  # class 1 has one member, never countable
    assert recall_at_k(e, labels, 1) == 1.0


def test_recall_at_k_matches_brute_force():
    for _ in range(50):
        n = int(RNG.integers(4, 12))
        e = RNG.normal(size=(n, 3))
        labels = RNG.integers(0, 3, size=n)
        if all((labels == c).sum() < 2 for c in range(3)):
            labels[:2] = 0
        k = int(RNG.integers(1, n))
        d = pairwise_distances(e)
        hits = denom = 0
        for q in range(n):
            if (labels == labels[q]).sum() < 2:
                continue
            denom += 1
            rest = [(d[q, j], j) for j in range(n) if j != q]
            rest.sort()
            if any(labels[j] == labels[q] for _, j in rest[:k]):
                hits += 1
        assert recall_at_k(e, labels, k) == pytest.approx(hits / denom)


def test_recall_at_k_bounds():
    e = RNG.normal(size=(4, 2))
    labels = np.array([0, 0, 1, 1])
    with pytest.raises(UsageError):
        recall_at_k(e, labels, 4)
    with pytest.raises(UsageError):
        recall_at_k(e, labels, 0)
    with pytest.raises(UsageError):
        recall_at_k(e, np.array([0, 1, 2, 3]), 1)


def test_verification_accuracy_hand_case():
    d = np.array([0.1, 0.2, 0.9, 1.0])
    same = np.array([True, True, False, False])
    assert verification_accuracy(d, same) == 1.0
    assert verification_accuracy(d, ~same) == 0.5  # no threshold helps


def test_verification_accuracy_matches_exhaustive_scan():
    for _ in range(200):
        n = int(RNG.integers(1, 13))
        d = np.round(RNG.uniform(0, 2, size=n), 2)
        same = RNG.integers(0, 2, size=n).astype(bool)
        assert verification_accuracy(d, same) == pytest.approx(
            verification_oracle(d, same), abs=1e-12
        )


def test_verification_from_embeddings_expands_all_pairs():
    e = RNG.normal(size=(5, 3))
    labels = np.array([0, 0, 1, 1, 2])
    d = pairwise_distances(e)
    iu = np.triu_indices(5, 1)
    expected = verification_accuracy(d[iu], labels[iu[0]] == labels[iu[1]])
    assert verification_from_embeddings(e, labels) == expected


def test_to_error_orientation():
    assert to_error(0.25, "classification-error") == 0.25
    assert to_error(0.8, "aucpr") == pytest.approx(0.2)
    assert to_error(1.0, "recall-at-k") == 0.0
    with pytest.raises(UsageError):
        to_error(0.5, "nope")


def test_discounted_metric_hand_values():
    # three points, most recent undiscounted
    got = discounted_metric([1.0, 2.0, 3.0], 0.5)
    assert got == pytest.approx(0.25 * 1.0 + 0.5 * 2.0 + 3.0, abs=1e-12)
    assert discounted_metric([5.0], 0.9) == 5.0
    assert discounted_metric([1.0, 2.0, 3.0], 1.0) == 6.0


def test_discounted_metric_gamma_zero_keeps_last():
    assert discounted_metric([7.0, 8.0, 9.0], 0.0) == 9.0


def test_discounted_metric_validation():
    with pytest.raises(UsageError):
        discounted_metric([], 0.9)
    with pytest.raises(UsageError):
        discounted_metric(np.ones((2, 2)), 0.9)


def test_reward_quantization():
    assert reward(0.5, 0.4) == 1
    assert reward(0.4, 0.5) == -1
    assert reward(0.4, 0.4) == 0


def test_metric_spec_dispatch():
    spec = MetricSpec(kind="classification-error")
    probs = np.array([[0.9, 0.1], [0.4, 0.6]])
    assert spec.compute(probs, np.array([0, 1])) == 0.0
    assert spec.error(probs, np.array([0, 1])) == 0.0

    spec = MetricSpec(kind="aucpr")
    labels = np.array([0, 1, 1, 0])
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.3, 0.7], [0.6, 0.4]])
    assert spec.compute(scores, labels) == pytest.approx(
        aucpr(scores[:, 1], labels == 1)
    )

    spec = MetricSpec(kind="recall-at-k", k=(2,))
    e = RNG.normal(size=(6, 3))
    labels = np.array([0, 0, 0, 1, 1, 1])
    assert spec.compute(e, labels) == recall_at_k(e, labels, 2)
    assert spec.error(e, labels) == pytest.approx(
        1.0 - recall_at_k(e, labels, 2)
    )


def test_metric_spec_validation():
    with pytest.raises(InputError):
        MetricSpec(kind="made-up")
    with pytest.raises(InputError):
        MetricSpec(reward_source="vibes")
    with pytest.raises(InputError):
        MetricSpec(kind="recall-at-k", k=())
    assert set(METRIC_KINDS) == {
        "classification-error", "aucpr", "recall-at-k", "verification-accuracy",
    }
