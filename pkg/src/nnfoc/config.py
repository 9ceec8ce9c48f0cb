"""Experiment configuration (one TOML or JSON document).

Every random choice is driven by an explicit entry in ``[seeds]``; a
config without all seeds is rejected rather than falling back to the clock.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .control import LoopConfig, PIGains, default_gains
from .errors import ConfigError
from .ground_truth import GTMethod
from .plant import MotorParams
from .prune import PruneConfig
from .tinyfc import TrainConfig

SCHEMA_VERSION = 1
SEED_KEYS = ("profile_case1", "profile_case2", "model_init", "train", "hpo", "calibration")


@dataclass
class ControlConfig:
    zeta: float = 0.6
    omega_n: float = 30.0
    current_bandwidth_hz: float = 800.0
    speed_limit: Optional[float] = 8.0  # speed-loop output limit (A); None means max_current
    speed_gains: Optional[dict] = None  # explicit {kp, ki, out_min, out_max} overrides tuning
    id_gains: Optional[dict] = None
    iq_gains: Optional[dict] = None

    def loop_config(self, plant: MotorParams) -> LoopConfig:
        sp, i_d, i_q = default_gains(plant, self.zeta, self.omega_n, self.current_bandwidth_hz, self.speed_limit)
        if self.speed_gains:
            sp = PIGains(**self.speed_gains)
        if self.id_gains:
            i_d = PIGains(**self.id_gains)
        if self.iq_gains:
            i_q = PIGains(**self.iq_gains)
        return LoopConfig(sp, i_d, i_q)


@dataclass
class ProfileSpec:
    kind: str
    file: Optional[str] = None


@dataclass
class FinetuneConfig:
    lr_factor: float = 0.1
    epochs: Optional[int] = None  # default: same as training


@dataclass
class HPOConfig:
    enabled: bool = True
    budget: int = 30
    strategy: str = "gp"
    subsample: int = 30000
    epochs: int = 5


@dataclass
class OutputConfig:
    trace_stride: int = 10  # write every n-th step to trace CSVs
    plot_window: float = 2.0  # seconds shown in zoomed plots
    bench_runs: int = 0  # host latency benchmark runs; 0 skips (timings are not reproducible)


@dataclass
class ExperimentConfig:
    seeds: dict
    plant: MotorParams = field(default_factory=MotorParams)
    control: ControlConfig = field(default_factory=ControlConfig)
    profiles: dict = field(default_factory=lambda: {"case1": ProfileSpec("case1"), "case2": ProfileSpec("case2")})
    ground_truth: dict = field(
        default_factory=lambda: {"case1": GTMethod("threshold"), "case2": GTMethod("rectify", band=0.15)}
    )
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    quantize_calibration: int = 4096
    hpo: HPOConfig = field(default_factory=HPOConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    initial_model: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        missing = [k for k in SEED_KEYS if k not in self.seeds]
        if missing:
            raise ConfigError(f"missing seeds: {missing} (seeds are mandatory)")
        for k, v in self.seeds.items():
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"seed {k!r} must be an integer, got {v!r}")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        for case in ("case1", "case2"):
            if case not in self.profiles or case not in self.ground_truth:
                raise ConfigError(f"config needs profile and ground_truth entries for {case}")
        for spec in self.profiles.values():
            if spec.file is not None and not Path(spec.file).is_file():
                raise ConfigError(f"profile file not found: {spec.file}")
        if self.initial_model is not None and not Path(self.initial_model).is_file():
            raise ConfigError(f"initial model not found: {self.initial_model}")
        if self.output.trace_stride < 1:
            raise ConfigError("trace_stride must be >= 1")

    def loop_config(self) -> LoopConfig:
        return self.control.loop_config(self.plant)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**asdict(self.train), "seed": self.seeds["train"]})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        if "seeds" not in d:
            raise ConfigError("config has no [seeds] section (seeds are mandatory)")

        def section(name, typ):
            try:
                return typ(**d[name])
            except TypeError as e:
                raise ConfigError(f"[{name}]: {e}") from None

        kw = {"seeds": dict(d["seeds"])}
        if "plant" in d:
            kw["plant"] = MotorParams.from_dict(d["plant"])
        for name, typ in (
            ("control", ControlConfig),
            ("train", TrainConfig),
            ("finetune", FinetuneConfig),
            ("prune", PruneConfig),
            ("hpo", HPOConfig),
            ("output", OutputConfig),
        ):
            if name in d:
                kw[name] = section(name, typ)
        if "train" in d and "split" in d["train"]:
            kw["train"].split = tuple(d["train"]["split"])
        # partial [profiles] / [ground_truth] tables override the default cases
        if "profiles" in d:
            profiles = cls.__dataclass_fields__["profiles"].default_factory()
            for case, spec in d["profiles"].items():
                spec = dict(spec)
                if spec.get("file") is not None and base_dir is not None:
                    spec["file"] = str((base_dir / spec["file"]).resolve())
                profiles[case] = ProfileSpec(**spec)
            kw["profiles"] = profiles
        if "ground_truth" in d:
            try:
                gt = cls.__dataclass_fields__["ground_truth"].default_factory()
                gt.update({k: GTMethod(**v) for k, v in d["ground_truth"].items()})
                kw["ground_truth"] = gt
            except TypeError as e:
                raise ConfigError(f"[ground_truth]: {e}") from None
        for key in ("quantize_calibration", "schema_version"):
            if key in d:
                kw[key] = d[key]
        if d.get("initial_model") is not None:
            p = Path(d["initial_model"])
            kw["initial_model"] = str((base_dir / p).resolve()) if base_dir is not None and not p.is_absolute() else str(p)
        return cls(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            d = json.loads(text)
        else:
            d = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None
    return ExperimentConfig.from_dict(d, base_dir=path.parent)


def default_config(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(seeds={k: seed for k in SEED_KEYS})
