"""Run configuration: one JSON-friendly dataclass holding every knob of a
training run, validated eagerly so bad configs fail before any training."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .controller import ObservationLayout
from .data import DatasetSpec
from .exceptions import ConfigError, InputError
from .losses import MODES, LossParameterization
from .metrics import METRIC_KINDS, REWARD_SOURCES, MetricSpec

TASKS = ("classification", "metric-learning")
OPTIMIZERS = ("momentum", "rmsprop")
ABLATIONS = ("history", "delta", "phi", "iter")
BASELINE_MODES = (
    "fixed-loss",
    "fixed-triplet",
    "random-phi",
    "confusion-phi",
    "contextual-bandit",
)

# metric kinds that read class probabilities vs embedding rows
_CLASSIFICATION_METRICS = ("classification-error", "aucpr")

__all__ = [
    "TASKS",
    "OPTIMIZERS",
    "ABLATIONS",
    "BASELINE_MODES",
    "TrainRunConfig",
    "load_config",
]


@dataclass
class TrainRunConfig:
    task: str = "classification"
    mode: str = "class-correlation"
    dataset: DatasetSpec = field(
        default_factory=lambda: DatasetSpec("confusable-gaussians")
    )

    # adaptation schedule
    inner_iters: int = 200          # K: gradient iterations between actions
    episode_len: int = 1            # T: actions per episode
    gamma: float = 0.9
    beta: float = 0.1
    alpha: float = 1.0
    margin: float = 0.2
    total_steps: int = 50
    num_children: int = 10

    # controller
    history: int = 10
    controller_depth: int = 2
    policy_lr: float = 0.001
    ablations: tuple[str, ...] = ()
    replay: bool = True
    replay_capacity: int = 1000

    # child models
    model_hidden: tuple[int, ...] = (32,)
    embed_dim: int = 8
    optimizer: str = "momentum"
    model_lr: float = 0.01
    batch_size: int = 32

    # measurement
    metric: str = "classification-error"
    metric_k: tuple[int, ...] = (1,)
    reward_source: str = "validation-metric"
    eval_subsample: int = 1024

    master_seed: int = 0

    def __post_init__(self):
        self.ablations = tuple(self.ablations)
        self.model_hidden = tuple(int(h) for h in self.model_hidden)
        self.metric_k = tuple(int(x) for x in self.metric_k)
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown loss mode {self.mode!r}")
        if self.task == "classification" and self.mode != "class-correlation":
            raise ConfigError(f"classification task cannot use mode {self.mode!r}")
        if self.task == "metric-learning" and self.mode == "class-correlation":
            raise ConfigError("metric-learning task cannot use class-correlation")
        if self.metric not in METRIC_KINDS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        metric_is_classification = self.metric in _CLASSIFICATION_METRICS
        if metric_is_classification != (self.task == "classification"):
            raise ConfigError(f"metric {self.metric!r} does not fit task {self.task!r}")
        if self.reward_source not in REWARD_SOURCES:
            raise ConfigError(f"unknown reward source {self.reward_source!r}")
        if self.inner_iters < 1:
            raise ConfigError("inner_iters must be >= 1")
        if self.episode_len < 1:
            raise ConfigError("episode_len must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma {self.gamma} outside [0, 1]")
        if self.beta <= 0.0:
            raise ConfigError("beta must be positive")
        if self.alpha <= 0.0:
            raise ConfigError("alpha must be positive")
        if self.margin < 0.0:
            raise ConfigError("margin must be >= 0")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.num_children < 1:
            raise ConfigError("need at least one child model")
        if self.history < 1:
            raise ConfigError("history must be >= 1")
        if self.controller_depth not in (1, 2, 3):
            raise ConfigError("controller_depth must be 1, 2, or 3")
        if self.policy_lr <= 0.0 or self.model_lr <= 0.0:
            raise ConfigError("learning rates must be positive")
        bad = set(self.ablations) - set(ABLATIONS)
        if bad:
            raise ConfigError(f"unknown ablations: {sorted(bad)}")
        if self.replay_capacity < 1:
            raise ConfigError("replay_capacity must be >= 1")
        if not self.model_hidden or any(h < 1 for h in self.model_hidden):
            raise ConfigError("model_hidden needs positive layer widths")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_subsample < 1:
            raise ConfigError("eval_subsample must be >= 1")
        self.dataset.validate()
        if self.task == "classification" and self.dataset.kind == "embedding-clusters":
            raise ConfigError("classification task cannot train on embedding-clusters")
        if self.task == "metric-learning" and self.dataset.kind != "embedding-clusters":
            raise ConfigError("metric-learning task needs embedding-clusters data")
        # the metric spec's own checks (k values etc.) run on construction
        try:
            self.metric_spec()
        except InputError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived views -----------------------------------------------------------

    def metric_spec(self) -> MetricSpec:
        return MetricSpec(self.metric, self.metric_k, self.reward_source)

    def observation_layout(self) -> ObservationLayout:
        return ObservationLayout(
            mode=self.mode,
            history=self.history,
            use_history="history" not in self.ablations,
            use_delta="delta" not in self.ablations,
            use_phi="phi" not in self.ablations,
            use_iter="iter" not in self.ablations,
        )

    def controller_hidden(self) -> tuple[int, ...]:
        return (32,) * self.controller_depth

    def initial_parameterization(self) -> LossParameterization:
        return LossParameterization(
            self.mode, self.dataset.num_classes, alpha=self.alpha, margin=self.margin
        )

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["dataset"] = self.dataset.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainRunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        doc = dict(doc)
        if "dataset" in doc:
            if not isinstance(doc["dataset"], DatasetSpec):
                doc["dataset"] = DatasetSpec.from_dict(doc["dataset"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str) -> TrainRunConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return TrainRunConfig.from_dict(doc)
