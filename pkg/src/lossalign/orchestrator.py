"""Outer training loop: a population of child models trains under
per-child adaptive loss parameters while a shared policy learns, from
quantized improvements of a held-out measure, which parameter moves help.

Every step has three phases. First, actions are sampled for every (child,
parameter) against an immutable policy snapshot and applied to each child's
own parameter set. Second, each child runs its inner gradient iterations
with periodic held-out evaluations; this phase touches only child-local
state, so children may run in worker threads. Third, episodes are
collected, replay is mixed in, and the policy takes one update.

Baseline arms reuse the same step machinery with the action phase swapped
out, so a fixed-loss run consumes exactly the same random draws as an
adaptive run whose actions are all zero.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import BASELINE_MODES, TrainRunConfig
from .controller import (
    BaselineTracker,
    Episode,
    PolicyNetwork,
    ReplayMemory,
    StatTracker,
    action_delta,
)
from .data import DatasetSplits, generate_dataset
from .engine.network import MLP
from .exceptions import ConfigError, InputError
from .kernels import packing
from .losses import (
    DEFAULT_BANK,
    DISTANCE_FLOOR,
    LossParameterization,
    ala_classification_loss,
    confusion_matrix,
    default_distance_loss,
    distance_mixture_loss,
    focal_weighting_loss,
)
from .metrics import discounted_metric, pairwise_distances, reward
from .rng import stream

logger = logging.getLogger("lossalign")

EVAL_POINTS = 10
MAX_RECOVERY_ATTEMPTS = 3
MOMENTUM = 0.9
RMS_RHO = 0.9
RMS_EPS = 1e-8

__all__ = [
    "ChildModel",
    "StepRecord",
    "RunReport",
    "Trainer",
    "run_training",
    "run_baseline",
    "run_transfer",
]


@dataclass
class ChildModel:
    cid: int
    net: MLP                       # evaluation view; weights synced from theta
    theta: np.ndarray
    velocity: np.ndarray
    layout: np.ndarray
    phi: LossParameterization
    data_rng: np.random.Generator
    action_rng: np.random.Generator
    trackers: dict = field(default_factory=dict)
    m_prev: float = 0.0
    last_confusion: np.ndarray | None = None
    last_reward: int = 0
    last_deltas: dict = field(default_factory=dict)


@dataclass
class StepRecord:
    step: int
    child_id: int
    train_loss: float
    val_loss: float
    val_metric: float
    test_metric: float
    reward: int
    phi: dict


@dataclass
class RunReport:
    config: TrainRunConfig
    arm: str
    records: list
    initial_records: list
    events: list
    final_test_metrics: list
    final_test_mean: float
    final_test_std: float
    policy: PolicyNetwork | None = None
    final_models: list | None = None

    def step_count(self) -> int:
        return 0 if not self.records else 1 + max(r.step for r in self.records)


def _stratified_indices(labels: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    """At most cap indices, class proportions preserved, >= 1 per class."""
    n = len(labels)
    if n <= cap:
        return np.arange(n)
    classes, counts = np.unique(labels, return_counts=True)
    quota = np.maximum(1, np.floor(cap * counts / n).astype(int))
    # trim overshoot from the largest quotas so the total lands on cap
    while quota.sum() > cap:
        quota[np.argmax(quota)] -= 1
    picks = []
    for cls, k in zip(classes, quota):
        members = np.flatnonzero(labels == cls)
        picks.append(rng.choice(members, size=min(k, len(members)), replace=False))
    return np.sort(np.concatenate(picks))


def _population_triplet_value(d_pos: np.ndarray, d_neg: np.ndarray, margin: float) -> float:
    """Mean hinge max(0, d+^2 - d-^2 + margin) over every (positive pair,
    negative pair) combination, i.e. the expectation under uniform triplet
    draws. Sorted prefix sums keep it O(n log n) instead of the full grid."""
    a = np.sort(d_pos.astype(np.float64) ** 2 + margin)
    b = np.sort(d_neg.astype(np.float64) ** 2)
    prefix = np.concatenate([[0.0], np.cumsum(b)])
    k = np.searchsorted(b, a, side="left")
    total = float((k * a - prefix[k]).sum())
    return total / (len(a) * len(b))


class _TripletIndex:
    """Per-class index tables for drawing (anchor, positive, negative)."""

    def __init__(self, labels: np.ndarray):
        self.labels = labels
        n = len(labels)
        classes = np.unique(labels)
        sizes = {c: int((labels == c).sum()) for c in classes}
        if min(sizes.values()) < 2:
            raise InputError("every class needs >= 2 training samples for pair drawing")
        self.class_size = np.zeros(n, dtype=np.int64)
        self.pos_rank = np.zeros(n, dtype=np.int64)      # anchor's slot in its class list
        starts, flat = {}, []
        for c in classes:
            members = np.flatnonzero(labels == c)
            starts[c] = len(flat)
            flat.extend(members)
            self.pos_rank[members] = np.arange(len(members))
            self.class_size[members] = len(members)
        self.class_flat = np.asarray(flat, dtype=np.int64)
        self.class_start = np.asarray([starts[c] for c in labels], dtype=np.int64)
        comp_starts, comp_flat = {}, []
        for c in classes:
            others = np.flatnonzero(labels != c)
            comp_starts[c] = len(comp_flat)
            comp_flat.extend(others)
        self.comp_flat = np.asarray(comp_flat, dtype=np.int64)
        self.comp_start = np.asarray([comp_starts[c] for c in labels], dtype=np.int64)
        self.comp_size = np.int64(n) - self.class_size

    def draw(self, rng: np.random.Generator, shape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = rng.integers(0, len(self.labels), size=shape)
        j = rng.integers(0, self.class_size[a] - 1)
        j = j + (j >= self.pos_rank[a])                  # skip the anchor itself
        p = self.class_flat[self.class_start[a] + j]
        jn = rng.integers(0, self.comp_size[a])
        n_ = self.comp_flat[self.comp_start[a] + jn]
        return a, p, n_


class Trainer:
    """One run: builds children, steps them, and assembles the report."""

    def __init__(
        self,
        config: TrainRunConfig,
        splits: DatasetSplits | None = None,
        policy: PolicyNetwork | None = None,
        trainable: bool = True,
        arm: str = "ala",
        label: str | None = None,
        force_zero_action: bool = False,
        workers: int = 1,
    ):
        config.validate()
        if arm != "ala" and arm not in BASELINE_MODES:
            raise ConfigError(f"unknown run arm {arm!r}")
        if arm in ("random-phi", "confusion-phi") and config.mode != "class-correlation":
            raise ConfigError(f"baseline {arm!r} needs class-correlation mode")
        if arm == "fixed-triplet" and config.task != "metric-learning":
            raise ConfigError("fixed-triplet is an embedding-task baseline")
        self.cfg = config
        self.arm = arm
        self.label = label if label is not None else arm
        self.trainable = trainable and arm == "ala"
        self.force_zero_action = force_zero_action
        self.workers = max(1, int(workers))
        self.classification = config.task == "classification"
        self.metric = config.metric_spec()
        self.layout = config.observation_layout()
        self.splits = splits if splits is not None else generate_dataset(
            config.dataset, config.master_seed
        )

        seed = config.master_seed
        sub_rng = stream(seed, "eval-subsample")
        self.val_idx = _stratified_indices(self.splits.y_val, config.eval_subsample, sub_rng)
        self.train_idx = _stratified_indices(self.splits.y_train, config.eval_subsample, sub_rng)
        self.x_val = self.splits.x_val[self.val_idx]
        self.y_val = self.splits.y_val[self.val_idx]
        self.x_train_eval = self.splits.x_train[self.train_idx]
        self.y_train_eval = self.splits.y_train[self.train_idx]

        if self.classification:
            # per-pair statistics need every class observed on the held-out
            # split; the stratified subsample then keeps them all each step
            missing = set(range(self.splits.num_classes)) - set(
                np.unique(self.splits.y_val).tolist()
            )
            if missing:
                raise InputError(
                    f"validation split has no samples of classes {sorted(missing)}"
                )

        k = config.inner_iters
        self.cadence = [len(c) for c in np.array_split(np.arange(k), EVAL_POINTS) if len(c)]
        if config.optimizer == "momentum":
            self.opt_args = (kernels.OPT_MOMENTUM, config.model_lr, MOMENTUM, 0.0)
        else:
            self.opt_args = (kernels.OPT_RMSPROP, config.model_lr, RMS_RHO, RMS_EPS)

        self.triplets = None if self.classification else _TripletIndex(self.splits.y_train)
        self.children = [self._make_child(cid) for cid in range(config.num_children)]

        needs_policy = arm == "ala"
        if needs_policy and policy is None:
            policy = PolicyNetwork(
                self.layout,
                hidden=config.controller_hidden(),
                beta=config.beta,
                rng=stream(seed, "controller-init"),
            )
        self.policy = policy if needs_policy else None
        self.baseline = BaselineTracker()
        self.replay = ReplayMemory(config.replay_capacity, rng=stream(seed, "replay"))
        self.random_phi_rng = stream(seed, "random-phi")
        self._pending: dict = {}
        self.events: list[str] = []

    def _make_child(self, cid: int) -> ChildModel:
        cfg = self.cfg
        if self.classification:
            out_dim, head = self.splits.num_classes, "softmax"
        else:
            out_dim, head = cfg.embed_dim, "l2"
        net = MLP(
            cfg.dataset.dim, list(cfg.model_hidden), out_dim, head,
            rng=stream(cfg.master_seed, "child-init", cid),
        )
        theta = packing.pack(net)
        child = ChildModel(
            cid=cid,
            net=net,
            theta=theta,
            velocity=np.zeros_like(theta),
            layout=packing.layout_of(net),
            phi=cfg.initial_parameterization(),
            data_rng=stream(cfg.master_seed, "child-data", cid),
            action_rng=stream(cfg.master_seed, "actions", cid),
        )
        for pid in child.phi.parameter_ids():
            child.trackers[pid] = StatTracker(self.layout)
            child.last_deltas[pid] = 0.0
        return child

    # -- evaluation --------------------------------------------------------------

    def _outputs(self, child: ChildModel, x: np.ndarray) -> np.ndarray:
        packing.unpack(child.theta, child.net)
        return child.net.forward(x)

    def _pair_distances(self, emb: np.ndarray, labels: np.ndarray):
        d = pairwise_distances(emb)
        iu = np.triu_indices(len(labels), 1)
        same = labels[iu[0]] == labels[iu[1]]
        flat = d[iu]
        return flat[same], flat[~same]

    def _loss_value(self, child: ChildModel, x: np.ndarray, labels: np.ndarray) -> float:
        out = self._outputs(child, x)
        if self.classification:
            return ala_classification_loss(out, labels, child.phi.values)
        d_pos, d_neg = self._pair_distances(out, labels)
        if self.arm == "fixed-triplet":
            return _population_triplet_value(d_pos, d_neg, self.cfg.margin)
        if self.arm == "fixed-loss" and self.cfg.mode == "distance-mixture":
            return default_distance_loss(d_pos, d_neg)
        if self.cfg.mode == "distance-mixture":
            return distance_mixture_loss(d_pos, d_neg, child.phi.values)
        return focal_weighting_loss(d_pos, d_neg, child.phi.values, alpha=self.cfg.alpha)

    def _source_value(self, child: ChildModel) -> float:
        """Reward-source measurement in lower-is-better orientation."""
        src = self.cfg.reward_source
        if src == "validation-metric":
            return self.metric.error(self._outputs(child, self.x_val), self.y_val)
        if src == "training-metric":
            return self.metric.error(
                self._outputs(child, self.x_train_eval), self.y_train_eval
            )
        if src == "validation-loss":
            return self._loss_value(child, self.x_val, self.y_val)
        return self._loss_value(child, self.x_train_eval, self.y_train_eval)

    def _val_stats(self, child: ChildModel):
        """Per-parameter statistics plus the record-level measurements."""
        out = self._outputs(child, self.x_val)
        val_metric = self.metric.compute(out, self.y_val)
        confusion = None
        stats = {}
        if self.classification:
            confusion = confusion_matrix(out, self.y_val, self.splits.num_classes).matrix
            for pid in child.phi.parameter_ids():
                i, j = (int(s) for s in pid.split(":"))
                stats[pid] = np.asarray([confusion[i, j], confusion[j, i]])
            val_loss = ala_classification_loss(out, self.y_val, child.phi.values)
        else:
            d_pos, d_neg = self._pair_distances(out, self.y_val)
            d_neg_floored = np.maximum(d_neg, DISTANCE_FLOOR)
            if self.cfg.mode == "distance-mixture":
                for k in range(5):
                    stats[f"m{k}"] = np.asarray([float(np.mean(DEFAULT_BANK.value(k, d_pos)))])
                for k in range(5, 10):
                    stats[f"m{k}"] = np.asarray(
                        [float(np.mean(DEFAULT_BANK.value(k, d_neg_floored)))]
                    )
                val_loss = distance_mixture_loss(d_pos, d_neg, child.phi.values)
            else:
                stats["fpos"] = np.asarray([float(np.mean(d_pos))])
                stats["fneg"] = np.asarray([float(np.mean(d_neg))])
                val_loss = focal_weighting_loss(
                    d_pos, d_neg, child.phi.values, alpha=self.cfg.alpha
                )
        return stats, float(val_loss), float(val_metric), confusion

    def _test_metric(self, child: ChildModel) -> float:
        return self.metric.compute(
            self._outputs(child, self.splits.x_test), self.splits.y_test
        )

    # -- phase 1: actions --------------------------------------------------------

    def _act(self, child: ChildModel, t: int) -> list:
        """Choose and apply this step's parameter moves; returns the
        (pid, observation, action) triples that seed episodes."""
        cfg = self.cfg
        taken = []
        if self.arm == "ala":
            for pid in child.phi.parameter_ids():
                obs = child.trackers[pid].observation(
                    child.phi.value_of(pid), t, cfg.total_steps
                )
                if self.force_zero_action:
                    action = 1
                else:
                    action, _ = self.policy.sample(obs, child.action_rng)
                child.phi.apply_action(pid, action_delta(action, cfg.beta))
                taken.append((pid, obs, action))
        elif self.arm == "random-phi":
            n = self.splits.num_classes
            m = np.eye(n)
            iu = np.triu_indices(n, 1)
            vals = self.random_phi_rng.uniform(-0.1, 0.1, size=len(iu[0]))
            m[iu] = vals
            m[(iu[1], iu[0])] = vals
            child.phi.set_values(m)
        elif self.arm == "confusion-phi":
            cbar = 0.5 * (child.last_confusion + child.last_confusion.T)
            off = cbar[~np.eye(len(cbar), dtype=bool)]
            peak = off.max()
            m = np.eye(len(cbar))
            if peak > 0.0:
                m = -np.clip(cbar / peak, 0.0, 1.0)
                np.fill_diagonal(m, 1.0)
            child.phi.set_values(m)
        elif self.arm == "contextual-bandit":
            for pid in child.phi.parameter_ids():
                tracker = child.trackers[pid]
                current = tracker.history[-1]
                if self.cfg.mode == "class-correlation":
                    # high confusion pushes the pair negative; otherwise
                    # relax toward zero without crossing it
                    old = child.phi.value_of(pid)
                    if current.sum() > tracker.ema.sum():
                        new = old - cfg.beta
                    else:
                        new = min(old + cfg.beta, 0.0)
                    child.phi.apply_action(pid, new - old)
                else:
                    up = child.last_deltas[pid] > 0 and child.last_reward == 1
                    delta = cfg.beta if up else -cfg.beta
                    child.phi.apply_action(pid, delta)
                    child.last_deltas[pid] = delta
        return taken

    # -- phase 2: inner iterations (child-local state only) -----------------------

    def _draw_chunk_batches(self, child: ChildModel, iters: int):
        shape = (iters, self.cfg.batch_size)
        if self.classification:
            return (child.data_rng.integers(0, len(self.splits.y_train), size=shape),)
        return self.triplets.draw(child.data_rng, shape)

    def _run_chunk(self, child: ChildModel, draws) -> float:
        if self.classification:
            return kernels.classifier_chunk(
                child.theta, child.velocity, child.layout,
                self.splits.x_train, self.splits.y_train,
                child.phi.values, draws[0], *self.opt_args,
            )
        if self.arm == "fixed-triplet":
            kind = kernels.KIND_TRIPLET
        elif self.arm == "fixed-loss" and self.cfg.mode == "distance-mixture":
            # the hand-written starting formulation; running it through its
            # own kernel keeps the frozen-weights reduction claim checkable
            kind = kernels.KIND_DEFAULT
        elif self.cfg.mode == "distance-mixture":
            kind = kernels.KIND_MIXTURE
        else:
            kind = kernels.KIND_FOCAL
        return kernels.embedding_chunk(
            child.theta, child.velocity, child.layout, self.splits.x_train,
            draws[0], draws[1], draws[2], kind, child.phi.values,
            self.cfg.margin, self.cfg.alpha, *self.opt_args,
        )

    def _child_step(self, child: ChildModel):
        cfg = self.cfg
        saved = (child.theta.copy(), child.velocity.copy())
        events = []
        series, chunk_losses = [], []
        for attempt in range(1, MAX_RECOVERY_ATTEMPTS + 1):
            series, chunk_losses = [], []
            diverged = False
            for iters in self.cadence:
                loss = self._run_chunk(child, self._draw_chunk_batches(child, iters))
                if not np.isfinite(loss):
                    diverged = True
                    break
                chunk_losses.append(loss * iters)
                series.append(self._source_value(child))
            if not diverged:
                break
            child.theta[...] = saved[0]
            child.velocity[...] = saved[1]
            events.append(
                f"child {child.cid}: non-finite loss, restored checkpoint "
                f"and resampled batches (attempt {attempt})"
            )
        else:
            # all attempts diverged: hold the checkpointed weights this step
            series = [self._source_value(child)] * len(self.cadence)
            chunk_losses = []
            events.append(f"child {child.cid}: giving up after {MAX_RECOVERY_ATTEMPTS} attempts")

        m_next = discounted_metric(series, cfg.gamma)
        r = reward(child.m_prev, m_next)
        train_loss = (
            float(sum(chunk_losses) / cfg.inner_iters) if chunk_losses else float("nan")
        )
        stats, val_loss, val_metric, confusion = self._val_stats(child)
        return {
            "reward": r,
            "m_next": m_next,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_metric": val_metric,
            "test_metric": self._test_metric(child),
            "stats": stats,
            "confusion": confusion,
            "events": events,
        }

    # -- phase 3: collection and the policy update ---------------------------------

    def _flush_episodes(self) -> list:
        done = []
        for chain in self._pending.values():
            rewards = [e.reward for e in chain]
            for idx, e in enumerate(chain):
                e.reward_to_go = float(sum(rewards[idx:]))
                e.steps_to_go = len(chain) - idx
                done.append(e)
        self._pending.clear()
        return done

    def _collect(self, child: ChildModel, t: int, taken: list, result: dict) -> int:
        for pid, stat in result["stats"].items():
            child.trackers[pid].push(stat)
        if result["confusion"] is not None:
            child.last_confusion = result["confusion"]
        created = 0
        for pid, obs, action in taken:
            next_obs = child.trackers[pid].observation(
                child.phi.value_of(pid), t + 1, self.cfg.total_steps
            )
            self._pending.setdefault((child.cid, pid), []).append(
                Episode(obs, action, result["reward"], next_obs, child.cid, pid, t)
            )
            created += 1
        child.m_prev = result["m_next"]
        child.last_reward = result["reward"]
        return created

    def step(self, t: int) -> list:
        """Run one full adaptation step; returns this step's records."""
        cfg = self.cfg
        taken = {child.cid: self._act(child, t) for child in self.children}
        for child in self.children:
            child.phi.validate()

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(self._child_step, self.children))
        else:
            results = [self._child_step(child) for child in self.children]

        records, created = [], 0
        for child, result in zip(self.children, results):
            created += self._collect(child, t, taken[child.cid], result)
            self.events.extend(result["events"])
            records.append(
                StepRecord(
                    step=t,
                    child_id=child.cid,
                    train_loss=result["train_loss"],
                    val_loss=result["val_loss"],
                    val_metric=result["val_metric"],
                    test_metric=result["test_metric"],
                    reward=result["reward"],
                    phi={pid: child.phi.value_of(pid) for pid in child.phi.parameter_ids()},
                )
            )
        if self.policy is not None:
            expected = len(self.children) * len(self.children[0].phi.parameter_ids())
            if created != expected:
                raise InputError(f"episode count {created} != {expected}")

        if (t + 1) % cfg.episode_len == 0:
            fresh = self._flush_episodes()
            if self.policy is not None and self.trainable and fresh:
                batch = list(fresh)
                if cfg.replay:
                    batch.extend(self.replay.sample(len(fresh)))
                    for e in fresh:
                        self.replay.push(e)
                self.policy.update(batch, self.baseline, cfg.policy_lr)
        return records

    def _initial_records(self) -> list:
        out = []
        for child in self.children:
            stats, val_loss, val_metric, confusion = self._val_stats(child)
            for pid, stat in stats.items():
                child.trackers[pid].push(stat)
            child.last_confusion = confusion
            v = self._source_value(child)
            child.m_prev = discounted_metric([v] * len(self.cadence), self.cfg.gamma)
            out.append(
                StepRecord(
                    step=0,
                    child_id=child.cid,
                    train_loss=self._loss_value(child, self.x_train_eval, self.y_train_eval),
                    val_loss=val_loss,
                    val_metric=val_metric,
                    test_metric=self._test_metric(child),
                    reward=0,
                    phi={pid: child.phi.value_of(pid) for pid in child.phi.parameter_ids()},
                )
            )
        return out

    def run(self) -> RunReport:
        initial = self._initial_records()
        records = []
        for t in range(self.cfg.total_steps):
            records.extend(self.step(t))
        tail = records[-len(self.children):] if records else initial
        finals = [r.test_metric for r in tail]
        models = []
        for child in self.children:
            packing.unpack(child.theta, child.net)
            models.append(child.net.copy())
        return RunReport(
            config=self.cfg,
            arm=self.label,
            records=records,
            initial_records=initial,
            events=self.events,
            final_test_metrics=finals,
            final_test_mean=float(np.mean(finals)),
            final_test_std=float(np.std(finals)),
            policy=self.policy,
            final_models=models,
        )


def run_training(
    config: TrainRunConfig,
    splits: DatasetSplits | None = None,
    workers: int = 1,
    force_zero_action: bool = False,
) -> RunReport:
    return Trainer(
        config, splits=splits, workers=workers, force_zero_action=force_zero_action
    ).run()


def run_baseline(
    config: TrainRunConfig,
    mode: str,
    splits: DatasetSplits | None = None,
    workers: int = 1,
) -> RunReport:
    if mode not in BASELINE_MODES:
        raise ConfigError(f"unknown baseline mode {mode!r}, expected one of {BASELINE_MODES}")
    return Trainer(config, splits=splits, arm=mode, workers=workers).run()


def run_transfer(
    config: TrainRunConfig,
    policy_path: str,
    finetune: bool = False,
    splits: DatasetSplits | None = None,
    workers: int = 1,
) -> RunReport:
    policy = PolicyNetwork.load(policy_path, expected_layout=config.observation_layout())
    return Trainer(
        config,
        splits=splits,
        policy=policy,
        trainable=finetune,
        label="transfer-finetune" if finetune else "transfer-frozen",
        workers=workers,
    ).run()
