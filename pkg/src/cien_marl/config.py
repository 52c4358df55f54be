"""Run configuration and its declarative file format.

A config file is a YAML (or JSON) mapping whose keys mirror :class:`RunConfig`;
``env`` and ``hyper`` are nested mappings mirroring
:class:`~cien_marl.env.EnvConfig` and :class:`~cien_marl.sac.SacHyper`.
Unknown keys anywhere are rejected. Overrides use dotted paths, e.g.
``env.n_agents=5`` or ``hyper.alpha=0.1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .agent import MODES
from .env import EnvConfig
from .sac import SacHyper


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FineTune:
    source: str
    episodes: int = 2000
    target_height: float = 1.25


@dataclass(frozen=True)
class RunConfig:
    mode: str = "cien_sac"
    env: EnvConfig = field(default_factory=EnvConfig)
    hyper: SacHyper = field(default_factory=SacHyper)
    episodes: int = 5000
    seeds: tuple[int, ...] = (0,)
    noise: tuple[float, float] | None = None
    fine_tune: FineTune | None = None
    output_dir: str | None = "runs"
    # exploration and evaluation protocol
    warmup_steps: int = 1000
    max_env_steps: int | None = None
    eval_every: int = 0
    eval_episodes: int = 10
    success_height: float = 1.30
    stop_on_success: bool = False
    checkpoint_every: int = 0
    # None keeps the published widths for the mode
    hidden: tuple[int, ...] | None = None
    cien_hidden: tuple[int, ...] | None = None
    zero_init: bool = False
    precision: str = "float64"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.episodes < 0:
            raise ConfigError("episodes must be non-negative")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(int(s) != s or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be unsigned integers")
        if self.fine_tune is not None and self.noise is None:
            raise ConfigError("fine_tune requires noise to be set")
        if self.noise is not None and (len(self.noise) != 2 or min(self.noise) < 0):
            raise ConfigError("noise must be a pair of non-negative standard deviations")
        if self.precision not in ("float64", "float32"):
            raise ConfigError("precision must be float64 or float32")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be positive")

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (EnvConfig, SacHyper)):
                v = v.to_dict()
            elif isinstance(v, FineTune):
                v = {"source": v.source, "episodes": v.episodes, "target_height": v.target_height}
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


def _tuple_or_none(v):
    return None if v is None else tuple(v)


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw: dict[str, Any] = dict(data)
    try:
        if "env" in kw:
            kw["env"] = EnvConfig.from_dict(kw["env"] or {})
        if "hyper" in kw:
            kw["hyper"] = SacHyper.from_dict(kw["hyper"] or {})
        if kw.get("fine_tune") is not None:
            ft = kw["fine_tune"]
            bad = set(ft) - {"source", "episodes", "target_height"}
            if bad:
                raise ConfigError(f"unknown fine_tune keys: {sorted(bad)}")
            kw["fine_tune"] = FineTune(**ft)
        for name in ("seeds", "hidden", "cien_hidden", "noise"):
            if name in kw:
                kw[name] = _tuple_or_none(kw[name])
        return RunConfig(**kw)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b=value`` overrides to a raw config mapping (values parsed as YAML)."""
    out = yaml.safe_load(yaml.safe_dump(data)) if data else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-mapping value")
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML/JSON: {exc}") from exc
    return from_dict(apply_overrides(data, list(overrides)))


def dump_config(config: RunConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
