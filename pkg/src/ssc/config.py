"""Flat key=value configuration file with strict unknown-key rejection."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .codecs import DEFAULT_LAMBDAS


class ConfigError(ValueError):
    """Bad configuration file or option value."""


@dataclass
class GlobalConfig:
    # dataset: a directory of PNG/PPM files, or the synthetic generator
    dataset_dir: str = ""
    gen_count: int = 64
    gen_val_count: int = 16
    gen_palette: int = 8
    crop: int = 64
    # codec / quality points
    qualities: tuple = (2, 3, 4, 5)
    lambdas: tuple = DEFAULT_LAMBDAS
    # transform defaults
    transform_kind: str = "desaturate"
    alpha: float = 0.8
    d_sc1: float = 2.0
    d_sc2: float = 2.0
    q_sc1: int = 3
    q_sc2: int = 3
    # filter nets
    depth: int = 8
    width: int = 32
    # training
    epochs: int = 5
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    # misc
    seed: int = 0
    jobs: int = 1
    out_dir: str = "out"

    def validate(self) -> "GlobalConfig":
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if any(not (1 <= q <= 8) for q in self.qualities):
            raise ConfigError(f"qualities must be within 1..8, got {self.qualities}")
        if len(self.lambdas) != 8 or any(l <= 0 for l in self.lambdas):
            raise ConfigError("lambdas must be 8 positive values for qualities 1..8")
        if min(self.crop, self.depth, self.width, self.epochs, self.batch_size) < 1:
            raise ConfigError("sizes and counts must be positive")
        if self.transform_kind not in ("identity", "desaturate", "pca_downscale", "pca_quantize"):
            raise ConfigError(f"unknown transform_kind {self.transform_kind!r}")
        return self


def _coerce(name: str, raw: str, kind):
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            parts = [p for p in raw.replace(",", " ").split() if p]
            return tuple(float(p) if "." in p or "e" in p.lower() else int(p) for p in parts)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def load_config(path: str | Path | None, overrides: dict | None = None) -> GlobalConfig:
    """Config file plus override dict (CLI flags win); unknown keys reject."""
    cfg = GlobalConfig()
    known = {f.name: f for f in fields(GlobalConfig)}

    def apply(name: str, value, from_file: bool):
        if name not in known:
            raise ConfigError(f"unknown config key {name!r}")
        current = getattr(cfg, name)
        kind = tuple if isinstance(current, tuple) else type(current)
        if from_file:
            value = _coerce(name, value, kind)
        elif isinstance(current, tuple) and not isinstance(value, tuple):
            value = tuple(value)
        setattr(cfg, name, value)

    if path:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            apply(key.strip(), raw.strip(), from_file=True)
    for key, value in (overrides or {}).items():
        if value is not None:
            apply(key, value, from_file=False)
    return cfg.validate()


def config_dump(cfg: GlobalConfig) -> str:
    lines = []
    for f in fields(GlobalConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"
