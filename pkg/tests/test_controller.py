"""Observation construction, replay, baseline, and the policy itself."""

import numpy as np
import pytest
from helpers import fd_gradient, rel_error

from lossalign.controller import (
    BaselineTracker,
    Episode,
    ObservationLayout,
    PolicyNetwork,
    ReplayMemory,
    StatTracker,
    action_delta,
    build_observation,
)
from lossalign.exceptions import CheckpointError, InputError, UsageError

RNG = np.random.default_rng(57)


def make_episode(obs, action=1, reward=0, **kw):
    defaults = dict(
        next_observation=obs, child_id=0, parameter_id="0:1", t=0,
    )
    defaults.update(kw)
    return Episode(obs, action, reward, **defaults)


def test_action_delta_mapping():
    assert action_delta(0, 0.1) == pytest.approx(-0.1)
    assert action_delta(1, 0.1) == 0.0
    assert action_delta(2, 0.1) == pytest.approx(0.1)
    with pytest.raises(UsageError):
        action_delta(3, 0.1)
    with pytest.raises(UsageError):
        action_delta(-1, 0.1)


def test_layout_lengths_per_mode():
    pair = ObservationLayout("class-correlation", history=10)
    assert pair.stats_per_param == 2
    assert pair.length == 10 * 2 + 2 + 1 + 1
    mix = ObservationLayout("distance-mixture", history=10)
    assert mix.stats_per_param == 1
    assert mix.length == 10 + 1 + 1 + 1


def test_layout_ablations_shrink_length():
    full = ObservationLayout("class-correlation", history=10)
    no_hist = ObservationLayout("class-correlation", history=10, use_history=False)
    # dropping history keeps the newest row only
    assert full.length - no_hist.length == 9 * 2
    no_delta = ObservationLayout("class-correlation", use_delta=False)
    assert full.length - no_delta.length == 2
    no_phi = ObservationLayout("class-correlation", use_phi=False)
    assert full.length - no_phi.length == 1
    no_iter = ObservationLayout("class-correlation", use_iter=False)
    assert full.length - no_iter.length == 1


def test_layout_roundtrip():
    layout = ObservationLayout("distance-mixture", history=6, use_delta=False)
    assert ObservationLayout.from_dict(layout.to_dict()) == layout


def test_build_observation_worked_example():
    layout = ObservationLayout("class-correlation", history=3)
    hist = np.array([[2.0, 4.0]])
    means = np.array([1.0, 2.0])
    obs = build_observation(hist, means, phi_value=0.5, iteration=2,
                            total_iters=8, layout=layout)
    assert obs.shape == (3 * 2 + 2 + 1 + 1,)
    # two zero-padded rows at the oldest end, then the normalized row
    np.testing.assert_allclose(obs[:6], [0, 0, 0, 0, 2.0, 2.0])
    np.testing.assert_allclose(obs[6:8], [1.0, 1.0])  # relative change
    assert obs[8] == 0.5
    assert obs[9] == pytest.approx(0.25)


def test_build_observation_clips_and_floors():
    layout = ObservationLayout("distance-mixture", history=2)
    obs = build_observation(
        np.array([[100.0]]), np.array([0.0]), 0.0, 0, 1, layout
    )
    assert obs[1] == 5.0   # newest row clipped after the mean floor
    assert obs[2] == 5.0   # delta clipped too
    neg = build_observation(
        np.array([[-100.0]]), np.array([1.0]), 0.0, 0, 1, layout
    )
    assert neg[1] == -5.0


def test_build_observation_errors():
    layout = ObservationLayout("class-correlation", history=2)
    with pytest.raises(UsageError):
        build_observation(np.ones((1, 1)), np.ones(1), 0.0, 0, 1, layout)
    with pytest.raises(UsageError):
        build_observation(np.ones((1, 2)), np.ones(2), 0.0, 0, 0, layout)


def test_stat_tracker_ema_and_window():
    layout = ObservationLayout("distance-mixture", history=3)
    tr = StatTracker(layout)
    with pytest.raises(UsageError):
        tr.observation(0.0, 0, 10)
    tr.push([2.0])
    np.testing.assert_allclose(tr.ema, [2.0])  # first push seeds the EMA
    tr.push([4.0])
    np.testing.assert_allclose(tr.ema, [0.9 * 2.0 + 0.1 * 4.0])
    for v in (1.0, 1.0, 1.0):
        tr.push([v])
    assert len(tr.history) == 3
    obs = tr.observation(0.3, 1, 4)
    assert obs.shape == (layout.length,)


def test_stat_tracker_rejects_wrong_width():
    tr = StatTracker(ObservationLayout("class-correlation"))
    with pytest.raises(UsageError):
        tr.push([1.0])


def test_episode_defaults():
    e = make_episode(np.zeros(3), reward=-1)
    assert e.reward_to_go == -1.0
    assert e.steps_to_go == 1


def test_replay_fifo_eviction():
    mem = ReplayMemory(capacity=3, rng=np.random.default_rng(0))
    for t in range(5):
        mem.push(make_episode(np.zeros(2), t=t))
    assert len(mem) == 3
    assert sorted(e.t for e in mem.buffer) == [2, 3, 4]


def test_replay_rejects_out_of_range_reward():
    mem = ReplayMemory(capacity=2)
    with pytest.raises(InputError):
        mem.push(make_episode(np.zeros(2), reward=2))


def test_replay_sampling_rules():
    mem = ReplayMemory(capacity=10, rng=np.random.default_rng(1))
    assert mem.sample(4) == []
    for t in range(6):
        mem.push(make_episode(np.zeros(2), t=t))
    with pytest.raises(UsageError):
        mem.sample(0)
    got = mem.sample(4)
    assert len(got) == 4
    assert len({e.t for e in got}) == 4  # without replacement
    capped = mem.sample(50)
    assert len(capped) == 6


def test_replay_capacity_validation():
    with pytest.raises(UsageError):
        ReplayMemory(capacity=0)


def test_baseline_tracker_update():
    b = BaselineTracker()
    b.update([1, 1, 0, 0])
    assert b.value == 0.5  # first batch seeds the EMA directly
    assert b.seeded
    b.update([-1])
    assert b.value == pytest.approx(0.95 * 0.5 + 0.05 * -1.0)


# -- the policy -------------------------------------------------------------------


def zeroed_policy(layout=None, hidden=(8,)):
    layout = layout or ObservationLayout("distance-mixture", history=4)
    policy = PolicyNetwork(layout, hidden=hidden, rng=np.random.default_rng(3))
    policy.net.weights[-1][...] = 0.0
    policy.net.biases[-1][...] = 0.0
    return policy


def test_policy_uniform_at_zero_logits():
    policy = zeroed_policy()
    obs = RNG.normal(size=policy.layout.length)
    np.testing.assert_allclose(policy.action_probs(obs), 1.0 / 3.0, atol=1e-12)
    counts = np.zeros(3)
    rng = np.random.default_rng(5)
    for _ in range(3000):
        a, logp = policy.sample(obs, rng)
        counts[a] += 1
        assert logp == pytest.approx(np.log(1.0 / 3.0))
    assert (np.abs(counts / 3000 - 1.0 / 3.0) < 0.05).all()


def test_policy_extreme_logits_are_stable():
    policy = zeroed_policy(hidden=(4,))
    # bias the head directly so logits are exactly (10, 0, -10)
    policy.net.weights[-1][...] = 0.0
    policy.net.biases[-1][...] = [10.0, 0.0, -10.0]
    p = policy.action_probs(np.zeros(policy.layout.length))
    assert p[0] == pytest.approx(1.0 / (1.0 + np.exp(-10.0) + np.exp(-20.0)))
    assert p[0] > 0.9999
    assert np.isfinite(p).all()


def test_policy_rejects_wrong_observation_width():
    policy = zeroed_policy()
    with pytest.raises(UsageError):
        policy.logits(np.zeros(policy.layout.length + 1))


def test_policy_update_empty_batch_is_noop():
    policy = zeroed_policy()
    before = [p.copy() for p in policy.net.params()]
    b = BaselineTracker()
    policy.update([], b)
    assert b.value == 0.0
    for old, new in zip(before, policy.net.params()):
        np.testing.assert_array_equal(old, new)


def test_policy_update_moves_probability_with_reward_sign():
    layout = ObservationLayout("distance-mixture", history=4)
    obs = RNG.normal(size=layout.length)
    for reward, expect_up in ((1, True), (-1, False)):
        policy = PolicyNetwork(layout, hidden=(8,), rng=np.random.default_rng(7))
        before = policy.action_probs(obs)[2]
        ep = make_episode(obs, action=2, reward=reward)
        policy.update([ep], BaselineTracker(seeded=True), lr=0.05)
        after = policy.action_probs(obs)[2]
        assert (after > before) == expect_up


def test_first_update_with_constant_rewards_is_a_noop():
    """A uniform first batch must not push any action: the seed makes the
    advantage exactly zero no matter how the sample counts came out."""
    layout = ObservationLayout("distance-mixture", history=4)
    policy = PolicyNetwork(layout, hidden=(8,), rng=np.random.default_rng(29))
    rng = np.random.default_rng(31)
    batch = [
        make_episode(rng.normal(size=layout.length), action=a, reward=1)
        for a in (2, 2, 2, 2, 0, 1)
    ]
    before = [p.copy() for p in policy.net.params()]
    b = BaselineTracker()
    policy.update(batch, b, lr=0.05)
    assert b.value == 1.0
    for old, new in zip(before, policy.net.params()):
        np.testing.assert_array_equal(old, new)


def test_policy_gradient_matches_finite_differences():
    layout = ObservationLayout("class-correlation", history=3)
    policy = PolicyNetwork(layout, hidden=(6,), rng=np.random.default_rng(11))
    episodes = []
    rng = np.random.default_rng(13)
    for t in range(12):
        obs = rng.normal(size=layout.length)
        episodes.append(
            make_episode(
                obs,
                action=int(rng.integers(0, 3)),
                reward=int(rng.integers(-1, 2)),
                t=t,
            )
        )
    b0 = 0.125

    def objective():
        obs = np.stack([e.observation for e in episodes])
        z = policy.net.forward(obs)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        chosen = logp[np.arange(len(episodes)), [e.action for e in episodes]]
        adv = np.asarray([e.reward_to_go - e.steps_to_go * b0 for e in episodes])
        return float((chosen * adv).mean())

    before = [p.copy() for p in policy.net.params()]
    lr = 1e-3
    policy.update(episodes, BaselineTracker(value=b0, decay=1.0, seeded=True), lr=lr)
    steps = [(p - old) / lr for p, old in zip(policy.net.params(), before)]
    # difference against the pre-update point, where the gradient was taken
    for arr, old in zip(policy.net.params(), before):
        arr[...] = old
    for idx, step in enumerate(steps):
        arr = policy.net.params()[idx]

        def f(a, arr=arr):
            saved = arr.copy()
            arr[...] = a
            val = objective()
            arr[...] = saved
            return val

        fd = fd_gradient(f, arr.copy())
        assert rel_error(step, fd) < 1e-4


def test_policy_update_folds_rewards_into_baseline():
    policy = zeroed_policy()
    obs = np.zeros(policy.layout.length)
    b = BaselineTracker()
    policy.update([make_episode(obs, reward=1)], b, lr=0.001)
    assert b.value == 1.0  # seeded
    policy.update([make_episode(obs, reward=-1)], b, lr=0.001)
    assert b.value == pytest.approx(0.95 * 1.0 + 0.05 * -1.0)


def test_policy_learns_a_constant_bandit():
    """Full loop: sampling, reward, update; the best arm must win."""
    layout = ObservationLayout("distance-mixture", history=4)
    policy = PolicyNetwork(layout, hidden=(8,), rng=np.random.default_rng(17))
    obs = np.full(layout.length, 0.5)
    rng = np.random.default_rng(19)
    baseline = BaselineTracker()
    for _ in range(300):
        batch = []
        for _ in range(8):
            a, _ = policy.sample(obs, rng)
            batch.append(make_episode(obs, action=a, reward=1 if a == 2 else -1))
        policy.update(batch, baseline, lr=0.05)
    assert policy.action_probs(obs)[2] > 0.9


def test_policy_copy_is_independent():
    policy = zeroed_policy()
    dup = policy.copy()
    dup.net.weights[0][...] += 1.0
    assert not np.allclose(policy.net.weights[0], dup.net.weights[0])


def test_policy_save_load_roundtrip(tmp_path):
    layout = ObservationLayout("class-correlation", history=5)
    policy = PolicyNetwork(layout, hidden=(6, 6), beta=0.2,
                           rng=np.random.default_rng(23))
    path = str(tmp_path / "policy.json")
    policy.save(path)
    loaded = PolicyNetwork.load(path)
    assert loaded.layout == layout
    assert loaded.beta == 0.2
    obs = RNG.normal(size=(4, layout.length))
    np.testing.assert_array_equal(loaded.logits(obs), policy.logits(obs))


def test_policy_load_rejects_mismatched_layout(tmp_path):
    policy = zeroed_policy()
    path = str(tmp_path / "policy.json")
    policy.save(path)
    other = ObservationLayout("class-correlation", history=4)
    with pytest.raises(CheckpointError):
        PolicyNetwork.load(path, expected_layout=other)
    # matching expectation loads fine
    PolicyNetwork.load(path, expected_layout=policy.layout)


def test_policy_load_rejects_network_checkpoint(tmp_path):
    from lossalign.engine.network import MLP

    path = str(tmp_path / "net.json")
    MLP(4, (4,), 3, head="linear").save(path)
    with pytest.raises(CheckpointError):
        PolicyNetwork.load(path)
