"""Flat ``section.key=value`` experiment configs.

A config file holds one assignment per line; ``#`` starts a comment and
blank lines are ignored. Every key has a default, so an empty file is a
valid config. ``ExperimentConfig.dumps`` writes the fully resolved config
back out in the same format, which is what reports echo.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from mmattack.co_attack import CoAttackConfig
from mmattack.encoders.model import FUSED, KINDS, ModelConfig
from mmattack.encoders.train import TrainConfig
from mmattack.image_attack import ImageBudget
from mmattack.text_attack import TextBudget

# train.seed and train.n_eval come from the root seed and corpus.n_eval
_TRAIN_DERIVED = ("seed", "n_eval")
_MODEL_FIXED = ("vocab_size",)


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _parse_names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    kind: str = FUSED
    n_pairs: int = 2000
    n_eval: int = 100
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    image_budget: ImageBudget = field(default_factory=ImageBudget)
    text_budget: TextBudget = field(default_factory=TextBudget)
    lexicon: str = ""
    alpha1: float = 3.0
    alpha2: float = 3.0
    # "grid", "baselines", "all" or a comma list of setting names
    settings: tuple[str, ...] = ("grid",)
    k: int = 1
    alphas: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)
    angle_slice: str = "cls"
    out: str = "runs"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"model.kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_pairs < 1:
            raise ConfigError("corpus.n_pairs must be >= 1")
        if self.n_eval < 0:
            raise ConfigError("corpus.n_eval must be >= 0")
        if self.k < 1:
            raise ConfigError("eval.k must be >= 1")
        if self.angle_slice not in ("cls", "full"):
            raise ConfigError("eval.slice must be cls or full")

    @property
    def co_attack(self) -> CoAttackConfig:
        return CoAttackConfig(self.alpha1, self.alpha2, self.image_budget, self.text_budget)

    @property
    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed, n_eval=self.n_eval)

    def flat(self) -> dict[str, str]:
        """Resolved config as ordered ``key -> text``."""
        return {key: _fmt(getter(self)) for key, (getter, _) in _keys().items()}

    def dumps(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.flat().items())

    def override(self, assignments: dict[str, str]) -> ExperimentConfig:
        cfg = self
        keys = _keys()
        for key, text in assignments.items():
            if key not in keys:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                cfg = keys[key][1](cfg, text.strip())
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
        return cfg


def _section_keys(prefix: str, attr: str, cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = getattr(cls(), f.name)
        cast = _parse_bool if isinstance(default, bool) else type(default)

        def getter(cfg, f=f):
            return getattr(getattr(cfg, attr), f.name)

        def setter(cfg, text, f=f, cast=cast):
            inner = dataclasses.replace(getattr(cfg, attr), **{f.name: cast(text)})
            return dataclasses.replace(cfg, **{attr: inner})

        out[f"{prefix}.{f.name}"] = (getter, setter)
    return out


def _top(attr: str, cast):
    return (lambda cfg: getattr(cfg, attr), lambda cfg, text: dataclasses.replace(cfg, **{attr: cast(text)}))


def _keys() -> dict:
    keys = {
        "seed": _top("seed", int),
        "corpus.n_pairs": _top("n_pairs", int),
        "corpus.n_eval": _top("n_eval", int),
        "model.kind": _top("kind", str),
    }
    keys.update(_section_keys("model", "model", ModelConfig, _MODEL_FIXED))
    keys.update(_section_keys("train", "train", TrainConfig, _TRAIN_DERIVED))
    keys.update(_section_keys("image_attack", "image_budget", ImageBudget))
    keys.update(_section_keys("text_attack", "text_budget", TextBudget))
    keys["text_attack.lexicon"] = _top("lexicon", str)
    keys["co_attack.alpha1"] = _top("alpha1", float)
    keys["co_attack.alpha2"] = _top("alpha2", float)
    keys["eval.settings"] = _top("settings", _parse_names)
    keys["eval.k"] = _top("k", int)
    keys["eval.alphas"] = _top("alphas", _parse_floats)
    keys["eval.slice"] = _top("angle_slice", str)
    keys["out"] = _top("out", str)
    return keys


def parse_assignments(lines, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    assignments = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        assignments = parse_assignments(text.splitlines(), str(p))
    assignments.update(overrides or {})
    try:
        return ExperimentConfig().override(assignments)
    except ConfigError:
        raise
    except ValueError as exc:  # raised by the budget / model dataclasses
        raise ConfigError(str(exc)) from None


def defaults_help() -> str:
    return "\n".join(f"  {k}={v}" for k, v in ExperimentConfig().flat().items())
