"""Flat ``key = value`` run configuration.

One file configures the model, the training run and the scene generator.
Unknown keys are errors; ``#`` starts a comment. ``SCG_SEED`` in the
environment overrides ``seed``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

from .data import SceneSpec
from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 42
    num_scenes: int = 400
    eval_every: int = 10
    eval_scenes: int = 100
    eval_offset: int = 1_000_000
    use_kl: bool = True
    use_dl: bool = True
    checkpoint: str = "checkpoint.scgc"

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r} (expected adam or sgd)")
        if self.num_scenes < 1 or self.epochs < 0:
            raise ConfigError("num_scenes must be >= 1 and epochs >= 0")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)

    def __post_init__(self):
        self.sync()

    def sync(self):
        """Propagate keys shared between sections."""
        self.model.seed = self.train.seed
        self.scene.seed = self.train.seed
        self.scene.n_classes = self.model.n_classes
        self.scene.image_size = self.model.image_size
        return self

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.scene.validate()
        return self


# key -> (section, attribute); shared keys land in one place and sync() copies them
_SCENE_KEYS = {"min_shapes": "min_shapes", "max_shapes": "max_shapes", "noise": "noise"}
_SKIP = {("model", "seed"), ("scene", "seed"), ("scene", "n_classes"), ("scene", "image_size"), ("scene", "palette")}


def _keys():
    keys = {}
    for section, cls in (("model", ModelConfig), ("train", TrainConfig)):
        for f in fields(cls):
            if (section, f.name) not in _SKIP:
                keys[f.name] = (section, f.name, f.type)
    for key, attr in _SCENE_KEYS.items():
        keys[key] = ("scene", attr, "int" if "shapes" in key else "float")
    return keys


KEYS = _keys()


def _coerce(raw, typ, key):
    typ = str(typ)
    try:
        if "tuple" in typ:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if typ.startswith("int | None"):
            return None if raw.lower() in ("", "none", "auto") else int(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, attr, typ = KEYS[key]
        setattr(getattr(cfg, section), attr, _coerce(raw, typ, key))
    return cfg.sync()


def apply_env(cfg: RunConfig, env=None) -> RunConfig:
    env = os.environ if env is None else env
    if env.get("SCG_SEED"):
        cfg.train.seed = int(env["SCG_SEED"])
    return cfg.sync()


def load_config(path=None, env=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), cfg)
    return apply_env(cfg, env).validate()


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "auto"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, (section, attr, _) in KEYS.items():
        lines.append(f"{key} = {_fmt(getattr(getattr(cfg, section), attr))}")
    return "\n".join(lines) + "\n"
