"""Flat ``key = value`` run configs with ``--key value`` overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .data import Dataset, gaussian_mixture, load_csv
from .model import ConfigError, TrainConfig

GENERATOR_KEYS = ("gen_components", "gen_n", "gen_dim", "gen_spread", "gen_noise")


@dataclass
class RunConfig(TrainConfig):
    data_path: str = ""
    gen_components: int = 8
    gen_n: int = 1024
    gen_dim: int = 2
    gen_spread: float = 4.0
    gen_noise: float = 0.3
    out_dir: str = "out"
    log_every: int = 1
    explicit: set = field(default_factory=set, repr=False, compare=False)

    def train_config(self, **changes) -> TrainConfig:
        base = {f.name: getattr(self, f.name) for f in fields(TrainConfig)}
        base.update(changes)
        return TrainConfig(**base)

    def validate(self) -> None:
        super().validate()
        if self.data_path and self.explicit & set(GENERATOR_KEYS):
            raise ConfigError("give either data_path or gen_* generator keys, not both")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")

    def dataset(self) -> Dataset:
        if self.data_path:
            return load_csv(self.data_path)
        try:
            return gaussian_mixture(self.seed, self.gen_components, self.gen_dim, self.gen_n,
                                    self.gen_spread, self.gen_noise)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def echo(self) -> str:
        lines = ["# vqib run config (entropies in nats)"]
        for f in fields(self):
            if f.name != "explicit":
                lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig) if f.name != "explicit"}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def parse_overrides(args: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    it = iter(args)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(f"--{key} needs a value") from None
        out[key] = value
    return out


def build_config(config_path: str | None, overrides: dict[str, str]) -> RunConfig:
    values: dict[str, str] = {}
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                values = parse_config_text(fh.read(), config_path)
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc.strerror}") from None
    values.update(overrides)
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    cfg.explicit = set(values)
    cfg.validate()
    return cfg


def replace(cfg: RunConfig, **changes) -> RunConfig:
    out = dataclasses.replace(cfg, **changes)
    out.explicit = set(cfg.explicit)
    return out
