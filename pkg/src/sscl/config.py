"""Flat key=value run configuration with strategy presets and range validation."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

STRATEGIES = ("none", "logit", "psedis", "dsgd", "combined", "custom")
DISTILL_SCOPES = ("labeled", "all", "gt")

# strategy -> (replay, logit_distill, pse_dis, dsgd); SSL stays on throughout
# and is controlled by lambda_ssl.
_STRATEGY_FLAGS = {
    "none": (False, False, False, False),
    "logit": (True, True, False, False),
    "psedis": (True, True, True, False),
    "dsgd": (True, False, False, True),
    "combined": (True, True, True, True),
}


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment run depends on, as flat scalar fields."""

    # task stream
    tasks: int = 5
    classes_per_task: int = 2
    train_per_class: int = 200
    test_per_class: int = 100
    labeled_fraction: float = 0.1
    class_radius: float = 3.0
    class_sigma: float = 0.5
    input_dim: int = 2
    # model
    hidden_dim: int = 32
    embed_dim: int = 8
    # optimization
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 50
    batch_current: int = 32
    batch_replay: int = 32
    # strategy
    strategy: str = "dsgd"
    replay: bool = True
    logit_distill: bool = False
    distill_scope: str = "all"
    pse_dis: bool = False
    dsgd: bool = True
    # hyperparameters
    gamma: float = 1.0
    k_order: int = 6
    tau: float = 0.95
    lambda_ssl: float = 1.0
    lambda_distill: float = 1.0
    lambda_sgd: float = 10.0
    buffer_capacity: int = 100
    labeled_quota: int = 25
    unlabeled_quota: int = 75
    sigma_weak: float = 0.05
    sigma_strong: float = 0.25
    # run
    seed: int = 0
    out_dir: str = "runs/out"

    def echo(self) -> dict:
        """Config as a plain dict for the report; out_dir is run metadata, not
        part of the experiment, and is left out so reports stay byte-comparable."""
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        del data["out_dir"]
        return data


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    text = raw.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}={raw!r} cannot be parsed as {kind}") from None


def apply_strategy(cfg: RunConfig, name: str) -> RunConfig:
    """Expand a strategy preset into the four component switches."""
    if name not in STRATEGIES:
        raise ConfigError(f"strategy={name!r} not in {STRATEGIES}")
    if name == "custom":
        return replace(cfg, strategy=name)
    replay, logit_distill, pse_dis, dsgd = _STRATEGY_FLAGS[name]
    return replace(
        cfg,
        strategy=name,
        replay=replay,
        logit_distill=logit_distill,
        pse_dis=pse_dis,
        dsgd=dsgd,
    )


def _apply(cfg: RunConfig, key: str, value) -> RunConfig:
    if key == "strategy":
        return apply_strategy(cfg, value)
    return replace(cfg, **{key: value})


_RANGES: list[tuple[str, str, object]] = [
    ("tasks", ">= 1", lambda c: c.tasks >= 1),
    ("classes_per_task", ">= 1", lambda c: c.classes_per_task >= 1),
    ("train_per_class", ">= 1", lambda c: c.train_per_class >= 1),
    ("test_per_class", ">= 1", lambda c: c.test_per_class >= 1),
    ("labeled_fraction", "in (0, 1]", lambda c: 0.0 < c.labeled_fraction <= 1.0),
    ("class_radius", "> 0", lambda c: c.class_radius > 0),
    ("class_sigma", ">= 0", lambda c: c.class_sigma >= 0),
    ("input_dim", ">= 2", lambda c: c.input_dim >= 2),
    ("hidden_dim", ">= 1", lambda c: c.hidden_dim >= 1),
    ("embed_dim", ">= 1", lambda c: c.embed_dim >= 1),
    ("learning_rate", "> 0", lambda c: c.learning_rate > 0),
    ("momentum", "in [0, 1)", lambda c: 0.0 <= c.momentum < 1.0),
    ("epochs", ">= 1", lambda c: c.epochs >= 1),
    ("batch_current", ">= 1", lambda c: c.batch_current >= 1),
    ("batch_replay", ">= 1", lambda c: c.batch_replay >= 1),
    ("strategy", f"one of {STRATEGIES}", lambda c: c.strategy in STRATEGIES),
    ("distill_scope", f"one of {DISTILL_SCOPES}", lambda c: c.distill_scope in DISTILL_SCOPES),
    ("gamma", "> 0", lambda c: c.gamma > 0),
    ("k_order", ">= 0", lambda c: c.k_order >= 0),
    ("tau", "in (0, 1]", lambda c: 0.0 < c.tau <= 1.0),
    ("lambda_ssl", ">= 0", lambda c: c.lambda_ssl >= 0),
    ("lambda_distill", ">= 0", lambda c: c.lambda_distill >= 0),
    ("lambda_sgd", ">= 0", lambda c: c.lambda_sgd >= 0),
    ("buffer_capacity", ">= 1", lambda c: c.buffer_capacity >= 1),
    ("labeled_quota", ">= 0", lambda c: c.labeled_quota >= 0),
    ("unlabeled_quota", ">= 0", lambda c: c.unlabeled_quota >= 0),
    (
        "labeled_quota+unlabeled_quota",
        "== buffer_capacity",
        lambda c: c.labeled_quota + c.unlabeled_quota == c.buffer_capacity,
    ),
    ("sigma_weak", ">= 0", lambda c: c.sigma_weak >= 0),
    ("sigma_strong", "> sigma_weak", lambda c: c.sigma_strong > c.sigma_weak),
    ("seed", ">= 0", lambda c: c.seed >= 0),
]


def validate(cfg: RunConfig) -> RunConfig:
    for key, legal, check in _RANGES:
        if not check(cfg):
            value = getattr(cfg, key, None) if hasattr(cfg, key) else None
            raise ConfigError(f"{key}={value!r} out of range; expected {legal}")
    return cfg


def read_config_file(path: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment, blank lines are skipped."""
    file = Path(path)
    if not file.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(file.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = raw
    return values


def parse_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then explicit overrides; validated at the end."""
    cfg = RunConfig()
    if path is not None:
        for key, raw in read_config_file(path).items():
            cfg = _apply(cfg, key, _coerce(key, raw))
    for key, value in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        cfg = _apply(cfg, key, value)
    return validate(cfg)
