"""Run configuration: one strict JSON document per run.

Unknown keys anywhere are rejected. ``preset`` names a row of the published
hyperparameter table and supplies loss defaults that explicit ``loss``
fields override.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .layers import desk_architecture, parse_architecture
from .regularization import MODES, LossConfig
from .training import SgdConfig

# (lambda_comp, epsilon) per dataset/network pair
PRESETS: dict[str, dict] = {
    "cifar10-resnet20": {"lambda_comp": 0.1, "epsilon": 0.1},
    "cifar10-resnet32": {"lambda_comp": 0.5, "epsilon": 0.001},
    "cifar100-resnet20": {"lambda_comp": 0.1, "epsilon": 0.1},
    "cifar100-resnet32": {"lambda_comp": 1.0, "epsilon": 0.001},
    "imagenet-resnet18": {"lambda_comp": 0.5, "epsilon": 0.001},
}
ABLATION = {"lambda_reg": 0.1, "epsilon": 0.001}
ABLATION_MODES = ("none", "l1", "l2", "funnel", "proposed")


def _strict(cls, d, what):
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} fields {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    n_classes: int = 4
    per_class: int = 600
    size: int = 16
    channels: int = 3
    seed: int = 0
    train_paths: tuple = ()
    test_paths: tuple = ()
    limit_per_class: int | None = None
    heldout_fraction: float = 0.1

    def __post_init__(self):
        if self.source not in ("synthetic", "cifar10"):
            raise ConfigError(f"unknown data source {self.source!r}")
        object.__setattr__(self, "train_paths", tuple(self.train_paths))
        object.__setattr__(self, "test_paths", tuple(self.test_paths))
        if self.source == "cifar10" and not self.train_paths:
            raise ConfigError("cifar10 source needs train_paths")
        if self.source == "synthetic" and (self.n_classes < 2 or self.per_class < 1 or self.size < 1):
            raise ConfigError("synthetic data needs n_classes >= 2 and positive per_class and size")
        if not 0 < self.heldout_fraction < 1:
            raise ConfigError("heldout_fraction must lie in (0, 1)")

    @property
    def classes(self) -> int:
        return 10 if self.source == "cifar10" else self.n_classes

    @property
    def input_shape(self) -> tuple:
        return (3, 32, 32) if self.source == "cifar10" else (self.channels, self.size, self.size)

    def to_json(self) -> dict:
        d = asdict(self)
        d["train_paths"], d["test_paths"] = list(self.train_paths), list(self.test_paths)
        return d


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    architecture: object = "desk"
    loss: LossConfig = field(default_factory=LossConfig)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    preset: str | None = None
    prune: bool | None = None
    modes: tuple = ABLATION_MODES
    precision: int = 32
    out_dir: str = "runs/default"
    report_every: int = 1

    def __post_init__(self):
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if self.report_every < 1:
            raise ConfigError("report_every must be >= 1")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ConfigError(f"unknown modes {bad}")
        object.__setattr__(self, "modes", tuple(self.modes))
        self.layer_items()  # validates the architecture eagerly

    def layer_items(self) -> list:
        if self.architecture == "desk":
            return desk_architecture(self.data.classes, self.data.input_shape[0])
        if isinstance(self.architecture, list):
            return parse_architecture(self.architecture)
        raise ConfigError("architecture must be 'desk' or a list of layer entries")

    def loss_for(self, mode: str) -> LossConfig:
        """Loss settings for one ablation arm. Penalty baselines use the
        ablation weights; ``proposed`` keeps the run's own loss section."""
        d = self.loss.to_json()
        d["mode"] = mode
        if mode in ("l1", "l2", "funnel"):
            d.update(ABLATION)
        return LossConfig(**d)

    def to_json(self) -> dict:
        return {
            "data": self.data.to_json(),
            "architecture": self.architecture,
            "loss": self.loss.to_json(),
            "sgd": self.sgd.to_json(),
            "preset": self.preset,
            "prune": self.prune,
            "modes": list(self.modes),
            "precision": self.precision,
            "out_dir": self.out_dir,
            "report_every": self.report_every,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        d = dict(d)
        preset = d.get("preset")
        loss = {}
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
            loss.update(PRESETS[preset])
        raw_loss = d.pop("loss", {})
        if not isinstance(raw_loss, dict):
            raise ConfigError("loss must be a JSON object")
        loss.update(raw_loss)
        d["loss"] = _strict(LossConfig, loss, "loss")
        d["sgd"] = _strict(SgdConfig, d.pop("sgd", {}), "sgd")
        d["data"] = _strict(DataConfig, d.pop("data", {}), "data")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"invalid run config: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_json(raw)
