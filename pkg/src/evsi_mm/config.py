"""Run configuration from flat ``key = value`` files (``#`` starts a comment)."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from . import models
from .nlreg import DEFAULT_LEVELS

__all__ = ["ConfigError", "RunConfig", "parse_config_text", "load_config"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _opt_int(text: str):
    return None if text.lower() in ("", "none") else int(text)


def _opt_path(text: str):
    return None if text.lower() in ("", "none") else text


@dataclass
class RunConfig:
    model: str = "bk"
    exercise: int = 1
    s: int = 100_000
    q: int = 50
    n_min: int = 10
    n_max: int = 200
    m: int = 10_000
    seed: int = 0
    out: str = "out"
    quantiles: tuple[float, ...] = DEFAULT_LEVELS
    # regression
    chains: int = 4
    burn_in: int = 1000
    iterations: int = 3000
    h_prior: str = "text"
    sigma_df: float = 1.0
    # conditional expectation
    fit_size: int | None = None
    fitted_values: str | None = None
    variance_points: str | None = None
    # model variants
    wtp: float = 100_000.0
    arms: int = 2
    reference_arm: int | None = None
    mu0: float = 0.0
    sigma0: float = 1.0
    sigma_d: float = 1.0
    # oracle
    oracle_s_out: int = 2000
    oracle_m_in: int = 2000
    oracle_n: tuple[int, ...] = (10, 50, 200)
    # design comparison
    label: str = ""
    fixed_cost: float = 0.0
    per_participant_cost: float = 0.0
    population: float = 1.0
    curve: str | None = None
    workers: int = 1
    source: str | None = field(default=None, compare=False)

    _PARSERS = {
        "quantiles": _floats,
        "oracle_n": _ints,
        "fit_size": _opt_int,
        "reference_arm": _opt_int,
        "fitted_values": _opt_path,
        "variance_points": _opt_path,
        "curve": _opt_path,
    }

    @classmethod
    def from_mapping(cls, values: dict, source: str | None = None) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls) if f.name != "source"}
        kwargs = {}
        for key, raw in values.items():
            name = key.strip().lower().replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = cls._coerce(name, raw, known[name])
        cfg = cls(**kwargs, source=source)
        cfg.validate()
        return cfg

    @classmethod
    def _coerce(cls, name, raw, fld):
        if not isinstance(raw, str):
            return raw
        raw = raw.strip()
        try:
            if name in cls._PARSERS:
                return cls._PARSERS[name](raw)
            kind = fld.type if isinstance(fld.type, str) else fld.type.__name__
            if kind.startswith("int"):
                return int(raw)
            if kind.startswith("float"):
                return float(raw)
            return raw
        except ValueError:
            raise ConfigError(f"bad value for {name}: {raw!r}") from None

    def replace(self, **changes) -> "RunConfig":
        cfg = dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.model not in models.MODEL_IDS:
            raise ConfigError(f"unknown model {self.model!r}")
        for name in ("s", "q", "m", "chains", "burn_in", "iterations", "oracle_s_out",
                     "oracle_m_in", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 1 <= self.n_min < self.n_max:
            raise ConfigError(f"need 1 <= n_min < n_max, got {self.n_min}, {self.n_max}")
        qs = tuple(self.quantiles)
        if not qs or list(qs) != sorted(qs) or not all(0 < p < 1 for p in qs):
            raise ConfigError("quantiles must be sorted and inside (0, 1)")
        if len(set(qs)) != len(qs):
            raise ConfigError("quantiles must be distinct")
        if self.h_prior not in ("text", "code"):
            raise ConfigError("h_prior must be 'text' or 'code'")
        if self.sigma_df <= 0:
            raise ConfigError("sigma_df must be positive")
        if self.population < 0:
            raise ConfigError("population multiplier must be >= 0")
        if self.fit_size is not None and self.fit_size < 2:
            raise ConfigError("fit_size must be >= 2")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if any(n < 0 for n in self.oracle_n):
            raise ConfigError("oracle sample sizes must be >= 0")
        try:
            spec = self.model_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.exercise not in spec.exercises:
            raise ConfigError(f"unknown exercise {self.exercise} for model {self.model!r}")

    def model_spec(self) -> models.ModelSpec:
        if self.model == "bk":
            return models.bk_model(self.wtp, self.arms, self.reference_arm)
        return models.normal_toy_model(self.mu0, self.sigma0, self.sigma_d)

    def resolve(self, path: str | None) -> Path | None:
        """Paths inside a config file are relative to that file."""
        if path is None:
            return None
        p = Path(path)
        if not p.is_absolute() and self.source is not None:
            p = Path(self.source).parent / p
        return p

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if f.name != "source"}


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return RunConfig.from_mapping(parse_config_text(text), source=str(path))
