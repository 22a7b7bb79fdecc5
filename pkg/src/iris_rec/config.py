"""Run configuration: a line-oriented ``key = value`` file with ``#`` comments.

Relative paths are resolved against the directory holding the config file.
Example::

    interactions = data/interactions.tsv
    visual_features = data/visual.txt
    textual_features = data/textual.txt
    output_dir = runs/mm
    variant = MultimodalIRIS
    loss = pointwise_log
    embedding_dim = 16
    top_n = 10, 20
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .gradients import LOSSES
from .model import Hyperparams, Variant

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    interactions: Path
    output_dir: Path
    variant: Variant
    hp: Hyperparams
    visual_features: Path | None = None
    textual_features: Path | None = None
    loss: str = "pointwise_log"
    max_epochs: int = 50
    patience: int = 5
    min_user_interactions: int = 3
    zero_fill: str = "none"
    feature_hidden_dim: int = 768

    @property
    def checkpoint_path(self) -> Path:
        return self.output_dir / "checkpoint.iris"

    @property
    def report_path(self) -> Path:
        return self.output_dir / "train_report.csv"

    @property
    def metrics_path(self) -> Path:
        return self.output_dir / "metrics.csv"

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, hp=replace(self.hp, seed=seed))


_PATH_KEYS = ("interactions", "visual_features", "textual_features", "output_dir")
_RUN_INT_KEYS = ("max_epochs", "patience", "min_user_interactions", "feature_hidden_dim")
_HP_FIELDS = {f.name: f for f in fields(Hyperparams)}


def _hp_value(key: str, raw: str):
    if key == "top_n":
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if key == "attention_dim":
        return None if raw.lower() in ("none", "") else int(raw)
    default = getattr(Hyperparams(), key)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, base_dir=".", source: str = "<config>") -> RunConfig:
    base_dir = Path(base_dir)
    raw: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = (lineno, value)

    known = set(_PATH_KEYS) | set(_RUN_INT_KEYS) | set(_HP_FIELDS) | {"variant", "loss", "zero_fill"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {unknown}")
    for required in ("interactions", "output_dir", "variant"):
        if required not in raw:
            raise ConfigError(f"{source}: missing required key {required!r}")

    hp_kwargs, run = {}, {}
    try:
        for key, (lineno, value) in raw.items():
            if key in _HP_FIELDS:
                hp_kwargs[key] = _hp_value(key, value)
            elif key in _PATH_KEYS:
                run[key] = (base_dir / value) if value else None
            elif key in _RUN_INT_KEYS:
                run[key] = int(value)
            elif key == "variant":
                run[key] = Variant.parse(value)
            else:
                run[key] = value
        hp = Hyperparams(**hp_kwargs)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None

    cfg = RunConfig(hp=hp, **run)
    if cfg.loss not in LOSSES:
        raise ConfigError(f"{source}: unknown loss {cfg.loss!r}; choose from {LOSSES}")
    if cfg.zero_fill not in ("none", "visual", "textual"):
        raise ConfigError(f"{source}: zero_fill must be none, visual or textual")
    if cfg.max_epochs < 0 or cfg.patience < 1 or cfg.min_user_interactions < 1:
        raise ConfigError(f"{source}: max_epochs >= 0, patience >= 1 and min_user_interactions >= 1 required")
    _check_paths(cfg, source)
    return cfg


def _check_paths(cfg: RunConfig, source: str):
    if not cfg.interactions.is_file():
        raise ConfigError(f"{source}: interactions file {cfg.interactions} does not exist")
    needed = []
    if cfg.variant.uses_features and cfg.zero_fill != "visual":
        needed.append(("visual_features", cfg.visual_features))
    if cfg.variant.uses_text and cfg.zero_fill != "textual":
        needed.append(("textual_features", cfg.textual_features))
    for key, path in needed:
        if path is None:
            raise ConfigError(f"{source}: {cfg.variant.value} requires {key}")
        if not path.is_file():
            raise ConfigError(f"{source}: {key} file {path} does not exist")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent, source=str(path))
