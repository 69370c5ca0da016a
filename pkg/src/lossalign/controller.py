"""The adaptive-loss policy: observation construction, action sampling over
{-beta, 0, +beta}, REINFORCE updates with an EMA baseline, and replay.

One policy instance serves every loss parameter. Observations for
different parameters share a fixed layout (a window of normalized
validation statistics, their relative change, the current parameter value,
and the normalized iteration number), which is what makes a trained policy
transferable across class counts.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .engine.network import MLP
from .exceptions import CheckpointError, InputError, UsageError
from .serialization import read_checkpoint, write_checkpoint

logger = logging.getLogger("lossalign")

STAT_CLIP = 5.0
MEAN_FLOOR = 1e-8
EMA_DECAY = 0.9

__all__ = [
    "ObservationLayout",
    "build_observation",
    "StatTracker",
    "Episode",
    "ReplayMemory",
    "BaselineTracker",
    "PolicyNetwork",
    "action_delta",
]


def action_delta(action: int, beta: float) -> float:
    """Map action index {0, 1, 2} to the parameter step {-beta, 0, +beta}."""
    if action not in (0, 1, 2):
        raise UsageError(f"action index {action} not in {{0, 1, 2}}")
    return (action - 1) * beta


@dataclass(frozen=True)
class ObservationLayout:
    """Shape of one loss parameter's observation vector.

    Ablation switches drop state components; dropping the history keeps
    only the newest statistics row, shrinking the window by (H-1)*c.
    """

    mode: str
    history: int = 10
    use_history: bool = True
    use_delta: bool = True
    use_phi: bool = True
    use_iter: bool = True

    @property
    def stats_per_param(self) -> int:
        return 2 if self.mode == "class-correlation" else 1

    @property
    def window_rows(self) -> int:
        return self.history if self.use_history else 1

    @property
    def length(self) -> int:
        c = self.stats_per_param
        n = self.window_rows * c
        if self.use_delta:
            n += c
        if self.use_phi:
            n += 1
        if self.use_iter:
            n += 1
        return n

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "history": self.history,
            "stats_per_param": self.stats_per_param,
            "use_history": self.use_history,
            "use_delta": self.use_delta,
            "use_phi": self.use_phi,
            "use_iter": self.use_iter,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ObservationLayout":
        return cls(
            mode=doc["mode"],
            history=int(doc["history"]),
            use_history=bool(doc.get("use_history", True)),
            use_delta=bool(doc.get("use_delta", True)),
            use_phi=bool(doc.get("use_phi", True)),
            use_iter=bool(doc.get("use_iter", True)),
        )


def build_observation(
    stat_history: np.ndarray,
    running_means: np.ndarray,
    phi_value: float,
    iteration: int,
    total_iters: int,
    layout: ObservationLayout,
) -> np.ndarray:
    """Assemble one observation vector.

    Statistics are divided by their running mean (floored at 1e-8) and
    clipped to [-5, 5]; rows missing early in training are zero-padded at
    the oldest end; delta is the newest row's relative change from the
    running mean.
    """
    hist = np.atleast_2d(np.asarray(stat_history, dtype=np.float64))
    means = np.maximum(np.asarray(running_means, dtype=np.float64), MEAN_FLOOR)
    c = layout.stats_per_param
    if hist.shape[1] != c or means.shape != (c,):
        raise UsageError(
            f"statistics have width {hist.shape[1]}, layout expects {c}"
        )
    rows = layout.window_rows
    window = np.zeros((rows, c))
    take = min(rows, hist.shape[0])
    window[rows - take :] = np.clip(hist[-take:] / means, -STAT_CLIP, STAT_CLIP)
    pieces = [window.ravel()]
    if layout.use_delta:
        delta = (hist[-1] - means) / means
        pieces.append(np.clip(delta, -STAT_CLIP, STAT_CLIP))
    if layout.use_phi:
        pieces.append(np.asarray([phi_value], dtype=np.float64))
    if layout.use_iter:
        if total_iters <= 0:
            raise UsageError("total_iters must be positive")
        pieces.append(np.asarray([iteration / total_iters], dtype=np.float64))
    return np.concatenate(pieces)


class StatTracker:
    """Windowed raw statistics and their EMA for one loss parameter.

    The EMA starts at the first pushed value so early observations are not
    dominated by the floor constant.
    """

    def __init__(self, layout: ObservationLayout):
        self.layout = layout
        self.history: deque = deque(maxlen=layout.window_rows)
        self.ema: np.ndarray | None = None

    def push(self, stats) -> None:
        stats = np.atleast_1d(np.asarray(stats, dtype=np.float64))
        if stats.shape != (self.layout.stats_per_param,):
            raise UsageError(
                f"stats shape {stats.shape} != ({self.layout.stats_per_param},)"
            )
        if self.ema is None:
            self.ema = stats.copy()
        else:
            self.ema = EMA_DECAY * self.ema + (1.0 - EMA_DECAY) * stats
        self.history.append(stats)

    def observation(self, phi_value: float, iteration: int, total_iters: int) -> np.ndarray:
        if not self.history:
            raise UsageError("no statistics pushed yet")
        return build_observation(
            np.stack(self.history), self.ema, phi_value, iteration, total_iters, self.layout
        )


@dataclass
class Episode:
    """One (s, a, r, s') transition for one loss parameter of one child."""

    observation: np.ndarray
    action: int
    reward: int
    next_observation: np.ndarray
    child_id: int
    parameter_id: str
    t: int
    reward_to_go: float = field(default=None)
    steps_to_go: int = 1

    def __post_init__(self):
        if self.reward_to_go is None:
            self.reward_to_go = float(self.reward)


class ReplayMemory:
    """Bounded FIFO of episodes with seeded uniform sampling."""

    def __init__(self, capacity: int = 1000, rng: np.random.Generator | None = None):
        if capacity < 1:
            raise UsageError("capacity must be >= 1")
        self.buffer: deque = deque(maxlen=capacity)
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def push(self, episode: Episode) -> None:
        if episode.reward not in (-1, 0, 1):
            raise InputError(f"episode reward {episode.reward!r} not in {{-1, 0, 1}}")
        self.buffer.append(episode)

    def sample(self, n: int) -> list[Episode]:
        if n < 1:
            raise UsageError("sample size must be >= 1")
        if not self.buffer:
            return []
        m = min(n, len(self.buffer))
        picks = self.rng.choice(len(self.buffer), size=m, replace=False)
        return [self.buffer[int(i)] for i in picks]

    def __len__(self) -> int:
        return len(self.buffer)


@dataclass
class BaselineTracker:
    """EMA of rewards; stays in [-1, 1] because rewards do.

    The first batch seeds the EMA directly. Starting from an arbitrary zero
    would give constant early rewards a large fake advantage, and with a
    three-way action space that reinforces whichever action sampling
    happened to favor."""

    value: float = 0.0
    decay: float = 0.95
    seeded: bool = False

    def update(self, rewards) -> None:
        mean = float(np.mean(rewards))
        if not self.seeded:
            self.value = mean
            self.seeded = True
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * mean


class PolicyNetwork:
    """Shared 3-action policy over loss-parameter observations."""

    def __init__(
        self,
        layout: ObservationLayout,
        hidden: tuple[int, ...] = (32, 32),
        beta: float = 0.1,
        rng: np.random.Generator | None = None,
    ):
        self.layout = layout
        self.hidden = tuple(int(h) for h in hidden)
        self.beta = float(beta)
        self.net = MLP(layout.length, list(self.hidden), 3, "linear", rng=rng)

    def _check_obs(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        width = obs.shape[-1] if obs.ndim else -1
        if width != self.layout.length:
            raise UsageError(
                f"observation length {width} does not match policy input "
                f"{self.layout.length}"
            )
        return obs

    def logits(self, obs) -> np.ndarray:
        obs = self._check_obs(obs)
        single = obs.ndim == 1
        out = self.net.forward(obs[None] if single else obs)
        return out[0] if single else out

    def action_probs(self, obs) -> np.ndarray:
        z = self.logits(obs)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def sample(self, obs, rng: np.random.Generator) -> tuple[int, float]:
        """Draw an action index and return it with its log-probability."""
        p = self.action_probs(obs)
        action = int(rng.choice(3, p=p))
        return action, float(np.log(p[action]))

    def update(self, episodes: list[Episode], baseline: BaselineTracker, lr: float = 0.001) -> None:
        """One gradient ascent step on mean[log pi(a|s) * (return - b)],
        then fold the batch's rewards into the baseline."""
        if not episodes:
            logger.warning("policy update skipped: empty episode batch")
            return
        rewards = [e.reward for e in episodes]
        seeding = not baseline.seeded
        if seeding:
            baseline.update(rewards)
        obs = np.stack([self._check_obs(e.observation) for e in episodes])
        actions = np.asarray([e.action for e in episodes])
        advantage = np.asarray(
            [e.reward_to_go - e.steps_to_go * baseline.value for e in episodes]
        )
        logits, pvals = self.net.forward_graph(obs)
        logp = logits.log_softmax()
        chosen = (logp * np.eye(3)[actions]).sum(axis=1)
        objective = (chosen * advantage).mean()
        objective.backward()
        for param, node in zip(self.net.params(), pvals):
            param += lr * node.grad
        if not seeding:
            baseline.update(rewards)

    def copy(self) -> "PolicyNetwork":
        dup = PolicyNetwork.__new__(PolicyNetwork)
        dup.layout = self.layout
        dup.hidden = self.hidden
        dup.beta = self.beta
        dup.net = self.net.copy()
        return dup

    # -- persistence ------------------------------------------------------------

    def save(self, path: str) -> None:
        meta = {
            "kind": "policy",
            "layout": self.layout.to_dict(),
            "hidden": list(self.hidden),
            "beta": self.beta,
        }
        write_checkpoint(path, meta, dict(zip(self.net.param_names(), self.net.params())))

    @classmethod
    def load(cls, path: str, expected_layout: ObservationLayout | None = None) -> "PolicyNetwork":
        meta, tensors = read_checkpoint(path)
        if meta.get("kind") != "policy":
            raise CheckpointError(f"not a policy checkpoint: {path}")
        layout = ObservationLayout.from_dict(meta["layout"])
        if expected_layout is not None and layout != expected_layout:
            raise CheckpointError(
                f"policy layout {layout.to_dict()} does not match the task's "
                f"expected layout {expected_layout.to_dict()}"
            )
        policy = cls(layout, hidden=tuple(meta["hidden"]), beta=meta.get("beta", 0.1))
        arrays = []
        for name, current in zip(policy.net.param_names(), policy.net.params()):
            if name not in tensors:
                raise CheckpointError(f"policy checkpoint missing tensor {name!r}")
            if tensors[name].shape != current.shape:
                raise CheckpointError(
                    f"policy tensor {name!r} has shape {tensors[name].shape}, "
                    f"expected {current.shape}"
                )
            arrays.append(tensors[name])
        policy.net.set_params(arrays)
        return policy
