"""Experiment configuration: defaults, validation and JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

ATTACKS = (
    "none",
    "naive_poison",
    "adaptive_rotation",
    "adaptive_frequency",
    "adaptive_both",
    "adaptive_euclidean",
    "tail_only",
    "label_swap",
    "loss_max",
)

REFERENCE_MODES = ("base_backbone", "shadow_backbone")
BASELINES = ("none", "krum", "dp")


@dataclass
class ExperimentConfig:
    """Everything a run needs; every field has a sensible desk-scale default."""

    # population and schedule
    n_clients: int = 10
    rounds: int = 30
    pmr: float = 0.0                      # fraction of clients that are malicious
    attack: str = "none"
    attacker_positions: list[int] | None = None  # default: spread evenly

    # dataset
    classes: int = 10
    per_class_train: int = 200
    per_class_test: int = 50
    image_dims: tuple[int, int] = (8, 8)
    noise_sigma: float = 0.15
    iid_rate: float = 0.8

    # poisoning
    pdr: float = 0.75
    trigger_origin: tuple[int, int] = (0, 0)
    trigger_size: tuple[int, int] = (2, 2)
    trigger_intensity: float = 1.0
    target_label: int = 0
    swap_classes: tuple[int, int] = (0, 1)
    alpha: float = 0.5                    # classification weight in adaptive attacks
    reference_mode: str = "base_backbone"

    # model and local training
    head_width: int = 32
    backbone_hidden: int = 64
    backbone_layers: int = 2
    lr: float = 0.05
    epochs: int = 1
    batch: int = 32

    # defense and baselines
    defense_enabled: bool = True
    low_fraction: float = 0.5
    warmup_min: int = 3
    baseline: str = "none"
    dp_clip_norm: float = 1.0
    dp_noise_sigma: float = 0.01

    seed: int = 7

    def attacker_count(self) -> int:
        count = self.pmr * self.n_clients
        if abs(count - round(count)) > 1e-9:
            raise ConfigError(
                f"pmr {self.pmr} of {self.n_clients} clients is not a whole number"
            )
        return int(round(count))

    def attacker_ids(self) -> list[int]:
        """Round-robin positions held by attackers.

        By default attackers sit mid-stride: the client order is cut into k
        equal strides with one attacker at the center of each, so a run
        never opens with an attacker and every attacker session is followed
        by benign ones before the round's evaluation.
        """
        k = self.attacker_count()
        if k == 0:
            return []
        if self.attacker_positions is not None:
            ids = sorted(set(int(i) for i in self.attacker_positions))
            if len(ids) != k:
                raise ConfigError(
                    f"attacker_positions lists {len(ids)} clients but pmr implies {k}"
                )
            if ids[0] < 0 or ids[-1] >= self.n_clients:
                raise ConfigError("attacker position outside the client range")
            return ids
        stride = self.n_clients / k
        return sorted(int(i * stride + stride / 2) for i in range(k))

    def validate(self) -> "ExperimentConfig":
        if self.n_clients < 1:
            raise ConfigError("n_clients must be at least 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be at least 1")
        if not 0.0 <= self.pmr < 1.0:
            raise ConfigError("pmr must lie in [0, 1)")
        bound = -(-self.n_clients // 2) - 1  # ceil(n/2) - 1
        if self.attacker_count() > bound:
            raise ConfigError(
                f"{self.attacker_count()} attackers exceed the tolerated bound "
                f"of {bound} for {self.n_clients} clients"
            )
        if self.attack not in ATTACKS:
            raise ConfigError(f"unknown attack {self.attack!r}")
        if self.attack == "none" and self.attacker_count() > 0:
            raise ConfigError("pmr > 0 requires picking an attack")
        if self.attack != "none" and self.attacker_count() == 0:
            raise ConfigError(f"attack {self.attack!r} requires pmr > 0")
        if self.reference_mode not in REFERENCE_MODES:
            raise ConfigError(f"unknown reference mode {self.reference_mode!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"unknown baseline {self.baseline!r}")
        if not 0.0 < self.low_fraction <= 1.0:
            raise ConfigError("low_fraction must lie in (0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 <= self.iid_rate <= 1.0:
            raise ConfigError("iid_rate must lie in [0, 1]")
        if not 0.0 < self.pdr <= 1.0:
            raise ConfigError("pdr must lie in (0, 1]")
        if self.warmup_min < 1:
            raise ConfigError("warmup_min must be at least 1")
        if self.lr <= 0 or self.epochs < 1 or self.batch < 1:
            raise ConfigError("training hyperparameters must be positive")
        if not 0 <= self.target_label < self.classes:
            raise ConfigError("target_label outside the class range")
        self.attacker_ids()  # raises on malformed explicit positions
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


_TUPLE_FIELDS = {"image_dims", "trigger_origin", "trigger_size", "swap_classes"}


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a validated config from a plain dict, rejecting unknown keys."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    kwargs = dict(doc)
    for key in _TUPLE_FIELDS & set(kwargs):
        kwargs[key] = tuple(kwargs[key])
    if kwargs.get("attacker_positions") is not None:
        kwargs["attacker_positions"] = [int(i) for i in kwargs["attacker_positions"]]
    try:
        cfg = ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
