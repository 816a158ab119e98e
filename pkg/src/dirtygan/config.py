"""Run configuration: a flat key=value text file plus command-line overrides.

Schema (all keys optional unless marked; types are parsed strictly):

  data.path*            CSV file with a header row
  data.label_column*    name of the label column
  data.missing_token    cell text meaning "missing" (default NA)
  data.class_map        raw->merged label pairs, e.g. "1:neg,2:pos,3:pos"

  corrupt.element_rate  MCAR element missing rate in [0,1)      (default 0.2)
  corrupt.label_rate    label missing rate in [0,1)             (default 0.2)
  corrupt.element_seed  integer                                 (default 0)
  corrupt.label_seed    integer                                 (default 1)

  train.epochs train.batch_size train.n_critic train.n_cg train.seed
  train.learning_rate train.rmsprop_decay train.rmsprop_epsilon
  train.d_z train.clip_c train.checkpoint_every train.init_scheme
  train.lambda1 train.lambda2 train.alpha1 train.alpha2 train.alpha3 train.alpha4
  train.regularizer     zero_centered | standard_gp | weight_clip
  train.gp_on_label_unit     true/false
  train.gp_data_block_only   true/false
  train.use_imputer train.use_cond_generator train.use_label_critic
  train.export_hidden   true/false: dump encoded/conditional hidden vectors

  eval.k_folds          (default 5)
  eval.repeats          (default 10)
  eval.master_seed      (default 0)
  eval.positive_class   class name; default: minority class per training fold
  eval.workers          parallel fold workers (default 1)
  eval.prediction_draws imputation draws averaged per prediction (default 16)

  sweep.axis            missing_rate | lambda1 | ... | epochs
  sweep.values          comma-separated numbers

  ablation.rows         "all" or comma list of
                        baseline_mlp,no_cond_no_label,no_cond,no_label,full

  output.dir*           artifact directory (created if absent)

Overrides: --set key=value (repeatable); an override always wins.
Every random decision flows from seeds in this file; nothing reads the clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .losses import REGULARIZERS, LossWeights
from .training import TrainConfig

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


@dataclass
class RunConfig:
    data_path: str = ""
    label_column: str = ""
    missing_token: str = "NA"
    class_map: dict | None = None
    element_rate: float = 0.2
    label_rate: float = 0.2
    element_seed: int = 0
    label_seed: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    export_hidden: bool = False
    k_folds: int = 5
    repeats: int = 10
    master_seed: int = 0
    positive_class: str | None = None
    workers: int = 1
    prediction_draws: int = 16
    sweep_axis: str | None = None
    sweep_values: list = field(default_factory=list)
    ablation_rows: list = field(default_factory=list)
    output_dir: str = "runs"

    def validate(self) -> "RunConfig":
        if not self.data_path:
            raise ConfigError("data.path is required")
        if not self.label_column:
            raise ConfigError("data.label_column is required")
        for name, rate in (("corrupt.element_rate", self.element_rate),
                           ("corrupt.label_rate", self.label_rate)):
            if not 0 <= rate < 1:
                raise ConfigError(f"{name} must be in [0, 1), got {rate}")
        if self.k_folds < 2:
            raise ConfigError("eval.k_folds must be >= 2")
        if self.repeats < 1:
            raise ConfigError("eval.repeats must be >= 1")
        if self.workers < 1:
            raise ConfigError("eval.workers must be >= 1")
        if self.prediction_draws < 1:
            raise ConfigError("eval.prediction_draws must be >= 1")
        self.train.validate()
        return self


def _parse_class_map(text: str) -> dict:
    out = {}
    for pair in text.split(","):
        pair = pair.strip()
        if not pair:
            continue
        if ":" not in pair:
            raise ConfigError(f"data.class_map entry '{pair}' is not raw:merged")
        raw, merged = pair.split(":", 1)
        out[raw.strip()] = merged.strip()
    return out


def _parse_bool(key: str, text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected true/false, got '{text}'") from None


def _parse_number(key: str, text: str, cast):
    try:
        return cast(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse '{text}' as {cast.__name__}") from None


_TRAIN_INTS = {"epochs", "batch_size", "n_critic", "n_cg", "seed", "checkpoint_every"}
_TRAIN_FLOATS = {"learning_rate", "rmsprop_decay", "rmsprop_epsilon", "clip_c"}
_TRAIN_BOOLS = {"gp_on_label_unit", "gp_data_block_only",
                "use_imputer", "use_cond_generator", "use_label_critic"}
_WEIGHT_FLOATS = {"lambda1", "lambda2", "alpha1", "alpha2", "alpha3", "alpha4"}


def _apply_key(cfg: RunConfig, key: str, value: str) -> None:
    section, _, name = key.partition(".")
    if section == "data":
        if name == "path":
            cfg.data_path = value
        elif name == "label_column":
            cfg.label_column = value
        elif name == "missing_token":
            cfg.missing_token = value
        elif name == "class_map":
            cfg.class_map = _parse_class_map(value)
        else:
            raise ConfigError(f"unknown key '{key}'")
    elif section == "corrupt":
        if name == "element_rate":
            cfg.element_rate = _parse_number(key, value, float)
        elif name == "label_rate":
            cfg.label_rate = _parse_number(key, value, float)
        elif name == "element_seed":
            cfg.element_seed = _parse_number(key, value, int)
        elif name == "label_seed":
            cfg.label_seed = _parse_number(key, value, int)
        else:
            raise ConfigError(f"unknown key '{key}'")
    elif section == "train":
        if name in _TRAIN_INTS:
            setattr(cfg.train, name, _parse_number(key, value, int))
        elif name in _TRAIN_FLOATS:
            setattr(cfg.train, name, _parse_number(key, value, float))
        elif name in _TRAIN_BOOLS:
            setattr(cfg.train, name, _parse_bool(key, value))
        elif name in _WEIGHT_FLOATS:
            setattr(cfg.train.weights, name, _parse_number(key, value, float))
        elif name == "regularizer":
            if value not in REGULARIZERS:
                raise ConfigError(f"train.regularizer must be one of {REGULARIZERS}")
            cfg.train.weights.regularizer = value
        elif name == "d_z":
            cfg.train.d_z = _parse_number(key, value, int)
        elif name == "init_scheme":
            cfg.train.init_scheme = value
        elif name == "export_hidden":
            cfg.export_hidden = _parse_bool(key, value)
        else:
            raise ConfigError(f"unknown key '{key}'")
    elif section == "eval":
        if name == "k_folds":
            cfg.k_folds = _parse_number(key, value, int)
        elif name == "repeats":
            cfg.repeats = _parse_number(key, value, int)
        elif name == "master_seed":
            cfg.master_seed = _parse_number(key, value, int)
        elif name == "positive_class":
            cfg.positive_class = value
        elif name == "workers":
            cfg.workers = _parse_number(key, value, int)
        elif name == "prediction_draws":
            cfg.prediction_draws = _parse_number(key, value, int)
        else:
            raise ConfigError(f"unknown key '{key}'")
    elif section == "sweep":
        if name == "axis":
            cfg.sweep_axis = value
        elif name == "values":
            cfg.sweep_values = [_parse_number(key, v, float) for v in value.split(",") if v.strip()]
        else:
            raise ConfigError(f"unknown key '{key}'")
    elif section == "ablation":
        if name == "rows":
            cfg.ablation_rows = ["all"] if value.strip() == "all" else \
                [v.strip() for v in value.split(",") if v.strip()]
        else:
            raise ConfigError(f"unknown key '{key}'")
    elif section == "output":
        if name == "dir":
            cfg.output_dir = value
        else:
            raise ConfigError(f"unknown key '{key}'")
    else:
        raise ConfigError(f"unknown key '{key}'")


def parse_config_text(text: str, overrides=()) -> RunConfig:
    """Parse ``key = value`` lines (# comments) and apply overrides in order."""
    cfg = RunConfig(train=TrainConfig(weights=LossWeights()))
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, _, value = line.partition("=")
        _apply_key(cfg, key.strip(), value.strip())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, _, value = item.partition("=")
        _apply_key(cfg, key.strip(), value.strip())
    return cfg.validate()


def load_config(path, overrides=()) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, overrides)
