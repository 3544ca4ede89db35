"""Run configuration: an INI file with sections vocab, data, schedules, model, training, paths.

Every key is optional; omitted keys keep the defaults below. Unknown
sections or keys are rejected so typos do not silently fall back.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass
class VocabSection:
    kind: str = "3D"
    N_max: int = 8
    n_f: int = 0  # 0: kind default (4 for 3D, 2 for 2D)
    K_f: int = 0  # 0: kind default (64 for 3D, Lab bin count for 2D)


@dataclass
class DataSection:
    n_samples: int = 5000
    split: str = "0.9,0.05,0.05"

    def ratios(self) -> tuple[float, ...]:
        try:
            return tuple(float(x) for x in self.split.split(","))
        except ValueError as exc:
            raise ConfigError(f"data.split must be comma-separated numbers, got {self.split!r}") from exc


@dataclass
class SchedulesSection:
    T: int = 100
    T_dec: int = 10
    eta_c: float = 0.05
    eta_f: float = 0.05
    eta_e: float = 0.05
    variant: str = "independent-mask"
    dec_schedule: str = "cosine"


@dataclass
class ModelSection:
    depth: int = 4
    d: int = 128
    heads: int = 4
    d_e: int = 32
    d_y: int = 64


@dataclass
class TrainingSection:
    prior_steps: int = 2000
    decoder_steps: int = 2000
    vq_steps: int = 400
    batch_size: int = 64
    lr: float = 3e-4
    grad_clip: float = 1.0
    cond_dropout: float = 0.1
    lambda_f: float = 1.0
    lambda_e: float = 1.0
    lambda_aux: float = 0.01
    checkpoint_every_epochs: int = 0
    log_every: int = 50


@dataclass
class PathsSection:
    out: str = "run"


@dataclass
class Config:
    vocab: VocabSection = field(default_factory=VocabSection)
    data: DataSection = field(default_factory=DataSection)
    schedules: SchedulesSection = field(default_factory=SchedulesSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_ini(self) -> str:
        lines = []
        for sec in fields(self):
            lines.append(f"[{sec.name}]")
            for k, v in asdict(getattr(self, sec.name)).items():
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def _coerce(value: str, typ, where: str):
    try:
        if typ is int or typ == "int":
            return int(value)
        if typ is float or typ == "float":
            return float(value)
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {value!r} as {typ}") from exc


def parse_config(text: str, source: str = "<string>") -> Config:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (K_f, N_max)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = Config()
    known = {f.name: f for f in fields(cfg)}
    for name in cp.sections():
        if name not in known:
            raise ConfigError(f"{source}: unknown section [{name}]")
        sec = getattr(cfg, name)
        types = {f.name: f.type for f in fields(sec)}
        for key, raw in cp.items(name):
            if key not in types:
                raise ConfigError(f"{source}: unknown key {name}.{key}")
            setattr(sec, key, _coerce(raw, types[key], f"{source}: {name}.{key}"))
    validate(cfg, source)
    return cfg


def validate(cfg: Config, source: str = "<config>") -> None:
    if cfg.vocab.kind not in ("2D", "3D"):
        raise ConfigError(f"{source}: vocab.kind must be 2D or 3D")
    if cfg.vocab.N_max < 1 or cfg.data.n_samples < 1:
        raise ConfigError(f"{source}: vocab.N_max and data.n_samples must be positive")
    if cfg.schedules.T < 1 or cfg.schedules.T_dec < 1:
        raise ConfigError(f"{source}: timesteps must be positive")
    if cfg.model.d % cfg.model.heads:
        raise ConfigError(f"{source}: model.d must be divisible by model.heads")
    cfg.data.ratios()


def load_config(path: Optional[str]) -> Config:
    """Read ``path``; ``None`` gives the defaults. Missing files raise ConfigError."""
    if path is None:
        return Config()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))


def parse_timesteps(spec: str) -> tuple[int, int]:
    """``"100+10"`` -> ``(100, 10)``."""
    try:
        a, b = spec.split("+")
        T, T_dec = int(a), int(b)
    except ValueError as exc:
        raise ConfigError(f"--timesteps must look like 'Tprior+Tdec', got {spec!r}") from exc
    if T < 1 or T_dec < 1:
        raise ConfigError("--timesteps values must be positive")
    return T, T_dec
