"""Run/train configuration, presets, and the INI-style config file."""

from __future__ import annotations

import configparser
import dataclasses
import io
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .spectral import LpfConfig

LAMBDA_REC = 0.276
LAMBDA_FLOW = 0.721

PRESETS = {
    "shallow": {"flow_depth": 2, "flow_correction": False},
    "deep": {"flow_depth": 16, "flow_correction": True},
}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 150
    patience: int = 20
    weight_decay: float = 1e-8
    lambda_rec: float = LAMBDA_REC
    lambda_flow: float = LAMBDA_FLOW
    lambda_reg: float = 1e-6
    eta: Optional[float] = None
    lpf: LpfConfig = field(default_factory=LpfConfig)
    n_heads: int = 8
    flow_depth: int = 2
    flow_hidden: int = 64
    time_embed_dim: int = 128
    use_mha: bool = True
    use_lpf: bool = True
    use_rin: bool = True
    use_backcast: bool = True
    use_flow: bool = True
    flow_correction: bool = False
    ode_steps: int = 1
    flow_draws: int = 1
    seed: int = 0
    task: str = "forecast"
    lookback: int = 96
    horizon: int = 96
    downsample: int = 2
    stride: int = 1
    eval_stride: Optional[int] = None

    def validate(self) -> "TrainConfig":
        for name in ("lr", "batch_size", "max_epochs", "patience", "lookback", "flow_hidden",
                     "n_heads", "ode_steps", "flow_draws", "stride", "time_embed_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0 or min(self.lambda_rec, self.lambda_flow, self.lambda_reg) < 0:
            raise ConfigError("weight decay and loss weights must be non-negative")
        if self.flow_depth < 1:
            raise ConfigError("flow_depth must be >= 1")
        if self.task not in ("forecast", "reconstruct"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "forecast" and self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.task == "reconstruct" and (self.downsample < 1 or self.lookback % self.downsample):
            raise ConfigError("lookback must be divisible by the downsampling factor")
        if self.eta is not None and self.eta <= 0:
            raise ConfigError("eta must be positive")
        return self

    def with_preset(self, preset: str) -> "TrainConfig":
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        return dataclasses.replace(self, **PRESETS[preset])

    @property
    def eval_step(self) -> int:
        return self.eval_stride or (self.horizon if self.task == "forecast" else self.lookback)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    preset: str = "shallow"
    data: Optional[str] = None
    checkpoint: Optional[str] = None
    out: str = "runs"
    horizons: tuple = ()


# section for every TrainConfig field; lpf fields live in [lpf]
_SECTIONS = {
    "train": ("lr", "batch_size", "max_epochs", "patience", "weight_decay", "seed", "stride",
              "eval_stride"),
    "loss": ("lambda_rec", "lambda_flow", "lambda_reg"),
    "model": ("task", "lookback", "horizon", "downsample", "eta", "n_heads", "use_mha", "use_rin",
              "use_backcast"),
    "lpf": ("use_lpf",),
    "flow": ("use_flow", "flow_depth", "flow_hidden", "time_embed_dim", "flow_correction",
             "ode_steps", "flow_draws"),
}
_LPF_FIELDS = ("n_harmonics", "base_period", "explicit_cutoff")
_RUN_FIELDS = ("preset", "data", "checkpoint", "out", "horizons")


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(raw: str, default, name: str, optional_type=None):
    text = raw.strip()
    if text.lower() in ("none", ""):
        return None
    kind = type(default) if default is not None else optional_type
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


_OPTIONAL_TYPES = {"eta": float, "eval_stride": int, "explicit_cutoff": int, "data": str,
                   "checkpoint": str}


def to_ini(run: RunConfig) -> str:
    cp = configparser.ConfigParser()
    cp["run"] = {k: _fmt(getattr(run, k)) for k in _RUN_FIELDS}
    for section, names in _SECTIONS.items():
        cp[section] = {k: _fmt(getattr(run.train, k)) for k in names}
    for k in _LPF_FIELDS:
        cp["lpf"][k] = _fmt(getattr(run.train.lpf, k))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def from_ini(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    known = set(_SECTIONS) | {"run"}
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
    run_kw, train_kw, lpf_kw = {}, {}, {}
    defaults_run, defaults_train, defaults_lpf = RunConfig(), TrainConfig(), LpfConfig()

    if cp.has_section("run"):
        for key, raw in cp["run"].items():
            if key not in _RUN_FIELDS:
                raise ConfigError(f"unknown key run.{key}")
            run_kw[key] = _parse(raw, getattr(defaults_run, key), key, _OPTIONAL_TYPES.get(key))
    for section, names in _SECTIONS.items():
        if not cp.has_section(section):
            continue
        for key, raw in cp[section].items():
            if section == "lpf" and key in _LPF_FIELDS:
                if key == "base_period":
                    lpf_kw[key] = raw.strip() if raw.strip() == "auto" else _parse(raw, 0, key)
                else:
                    lpf_kw[key] = _parse(raw, getattr(defaults_lpf, key), key, _OPTIONAL_TYPES.get(key))
                continue
            if key not in names:
                raise ConfigError(f"unknown key {section}.{key}")
            train_kw[key] = _parse(raw, getattr(defaults_train, key), key, _OPTIONAL_TYPES.get(key))

    preset = run_kw.get("preset") or "shallow"
    base = TrainConfig().with_preset(preset)
    train = dataclasses.replace(base, lpf=LpfConfig(**lpf_kw), **train_kw).validate()
    run_kw["preset"] = preset
    if run_kw.get("horizons") is None:
        run_kw.pop("horizons", None)
    if run_kw.get("out") is None:
        run_kw.pop("out", None)
    return RunConfig(train=train, **run_kw)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return from_ini(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["lpf"] = LpfConfig(**d.get("lpf", {}))
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in d.items() if k in names})


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per named purpose, all derived from one seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
