"""Run configuration: one flat ``key = value`` file.

Blank lines and ``#`` comments are ignored. Keys are the fields of
:class:`RunConfig`; model keys and training keys share the namespace.
Booleans accept true/false/yes/no/1/0; ``styles`` is a comma-separated
list whose order assigns StyleIds 1..K.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .training import TrainingConfig
from .transformer import TransformerConfig

_MODEL_KEYS = ("num_layers", "num_heads", "model_dim", "ff_dim", "max_len")
_TRAIN_KEYS = tuple(f.name for f in fields(TrainingConfig))
ABLATIONS = ("disable_self", "disable_cycle", "disable_style", "disc_real_only", "disc_generated_only")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data_dir: str = ""
    synthetic: bool = False
    synthetic_seed: int = 0
    synthetic_train: int = 2000
    synthetic_dev: int = 200
    synthetic_test: int = 200
    styles: tuple[str, ...] = ("positive", "negative")
    file_pattern: str = "{style}.{split}.txt"
    min_freq: int = 1
    # outputs and evaluation
    out_dir: str = "run"
    lm_order: int = 5
    eval_size: int = 200
    # model
    num_layers: int = 2
    num_heads: int = 2
    model_dim: int = 64
    ff_dim: int = 128
    max_len: int = 32
    # training (mirrors TrainingConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        if len(self.styles) < 2:
            raise ConfigError("styles: need at least two style names")
        if len(set(self.styles)) != len(self.styles):
            raise ConfigError("styles: names must be distinct")
        if not self.synthetic and not self.data_dir:
            raise ConfigError("data_dir: required unless synthetic = true")
        if self.synthetic and len(self.styles) != 2:
            raise ConfigError("styles: the synthetic task has exactly two styles")
        for key in ("{style}", "{split}"):
            if key not in self.file_pattern:
                raise ConfigError(f"file_pattern: must contain {key}")
        if self.lm_order < 1 or self.eval_size < 1 or self.min_freq < 1:
            raise ConfigError("lm_order, eval_size and min_freq must be positive")

    def model_config(self, vocab_size: int) -> TransformerConfig:
        try:
            return TransformerConfig(vocab_size, len(self.styles), **{k: getattr(self, k) for k in _MODEL_KEYS})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def style_id(self, name: str) -> int:
        try:
            return self.styles.index(name) + 1
        except ValueError:
            raise ConfigError(f"unknown style {name!r}; configured styles are {', '.join(self.styles)}") from None

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "training"}
        d["styles"] = list(self.styles)
        d.update(self.training.to_dict())
        return d

    def replace(self, **updates) -> "RunConfig":
        """Copy with updates to either run-level or training keys."""
        d = self.to_dict()
        for k in updates:
            if k not in d:
                raise ConfigError(f"unknown config key {k!r}")
        d.update(updates)
        return from_mapping(d)

    def dumps(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _run_fields() -> dict[str, Any]:
    """Run-level keys and their defaults."""
    return {f.name: f.default for f in fields(RunConfig) if f.name != "training"}


def _coerce(key: str, raw: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(str(raw).strip())
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(str(raw).strip())
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(default, tuple):
        items = raw if isinstance(raw, (list, tuple)) else [s.strip() for s in str(raw).split(",")]
        if any(not s for s in items):
            raise ConfigError(f"{key}: empty item in list {raw!r}")
        return tuple(items)
    return str(raw).strip()


def from_mapping(values: dict[str, Any]) -> RunConfig:
    run_defaults = _run_fields()
    train_defaults = TrainingConfig()
    run_kw, train_kw = {}, {}
    for key, raw in values.items():
        if key in run_defaults:
            run_kw[key] = _coerce(key, raw, run_defaults[key])
        elif key in _TRAIN_KEYS:
            train_kw[key] = _coerce(key, raw, getattr(train_defaults, key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        training = TrainingConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(**run_kw, training=training)


def parse(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    try:
        return from_mapping(values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse(text, str(path))


__all__ = ["ABLATIONS", "ConfigError", "RunConfig", "from_mapping", "load", "parse"]
