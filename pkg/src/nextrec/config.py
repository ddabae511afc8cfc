"""Run configuration: flat key=value files, defaults, CLI overrides.

One configuration object drives the whole pipeline; every command writes
the effective configuration next to its outputs so a run can be reproduced
by pointing back at that file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .model import Hyperparams
from .pretrain import WalkConfig
from .skipgram import SkipGramConfig
from .train import TrainConfig


class ConfigError(Exception):
    """Raised for unreadable or inconsistent configuration."""


@dataclass
class RunConfig:
    # input corpus
    checkins: str = ""
    pois: str = ""
    user_meta: str = ""  # empty: no user meta file
    outdir: str = "out"
    # preprocessing
    min_user_checkins: int = 10
    min_poi_users: int = 10
    distance: str = "haversine"  # or "planar"
    geo_kernel: bool = True
    geo_pair_cap: int = 0  # 0: all pairs
    tz_offset_hours: float = 0.0
    # model
    dim: int = 60
    alpha: float = 0.3
    beta: float = 0.2
    pi_hours: float = 6.0
    slots: int = 24
    reg_lambda: float = 0.01
    learning_rate: float = 0.005
    use_meta: bool = True
    use_interval: bool = True
    use_timeslot: bool = True
    # embedding pre-training
    rho: float = 0.0
    walks_per_node: int = 50
    walk_length: int = 20
    window: int = 10
    sg_epochs: int = 5
    sg_learning_rate: float = 0.025
    sg_min_learning_rate: float = 1e-4
    # training
    max_epochs: int = 50
    patience: int = 5
    # evaluation
    coldstart_users: int = 200
    # global
    seed: int = 1
    threads: int = 1

    def validate(self) -> None:
        if self.distance not in ("haversine", "planar"):
            raise ConfigError(f"distance must be haversine or planar, got {self.distance!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.hyperparams().validate()
        self.walk_config().validate()
        self.skipgram_config().validate()
        self.train_config().validate()

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            dim=self.dim,
            alpha=self.alpha,
            beta=self.beta,
            pi_hours=self.pi_hours,
            slots=self.slots,
            lam=self.reg_lambda,
            gamma=self.learning_rate,
            use_meta=self.use_meta,
            use_interval=self.use_interval,
            use_timeslot=self.use_timeslot,
            tz_offset_hours=self.tz_offset_hours,
        )

    def walk_config(self) -> WalkConfig:
        return WalkConfig(
            rho=self.rho,
            walks_per_node=self.walks_per_node,
            walk_length=self.walk_length,
            seed=self.seed,
        )

    def skipgram_config(self) -> SkipGramConfig:
        return SkipGramConfig(
            dim=self.dim,
            window=self.window,
            epochs=self.sg_epochs,
            learning_rate=self.sg_learning_rate,
            min_learning_rate=self.sg_min_learning_rate,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(max_epochs=self.max_epochs, patience=self.patience, seed=self.seed)

    def data_dir(self) -> Path:
        return Path(self.outdir) / "data"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    f = _FIELDS[name]
    if f.type == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if f.type == "int":
        return int(raw)
    if f.type == "float":
        return float(raw)
    return raw


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _coerce(key, value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def write_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")
