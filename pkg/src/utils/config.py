"""
Configuration loader for hierform runs
"""

import os
from pathlib import Path
from typing import Any, Dict, Iterable, Literal, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.hierarchy.model import Ablations
from src.hierarchy.params import ModelShape
from src.hierarchy.planner import DurationStats, PlanOverrides, StagePlan, derive_stage_plan
from src.training.trainer import TrainConfig

LOG_LEVEL_ENV = "HIERFORM_LOG_LEVEL"

DATASET_PRESETS: Dict[str, Dict[str, Any]] = {
    "iemocap": {"max_len": 326, "classes": 4, "epochs": 120, "learning_rate": 5e-4},
    "meld": {"max_len": 224, "classes": 7, "epochs": 120, "learning_rate": 5e-4},
    "pitt": {"max_len": 328, "classes": 2, "epochs": 80, "learning_rate": 1e-3},
    "daic_woz": {"max_len": 426, "classes": 2, "epochs": 60, "learning_rate": 1e-4},
}


def _int_list(value: Any) -> Any:
    if isinstance(value, str):
        text = value.strip().strip("()[]")
        return tuple(int(part) for part in text.split(",") if part.strip())
    return value


def _optional(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("", "none", "auto"):
        return None
    return value


class RunConfig(BaseModel):
    """Every tunable of a run, with the published defaults"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dataset: Optional[str] = None

    # duration statistics in ms
    phone_short_ms: float = Field(50.0, gt=0)
    phone_long_ms: float = Field(200.0, gt=0)
    word_short_ms: float = Field(250.0, gt=0)
    word_long_ms: float = Field(1000.0, gt=0)
    mismatch: float = Field(1.0, gt=0)
    hop_ms: float = Field(20.0, gt=0)

    # model
    layers: Tuple[int, int, int, int] = (2, 2, 4, 4)
    d: int = Field(1024, ge=1)
    d_in: Optional[int] = Field(None, ge=1)
    d_ff: Optional[int] = Field(None, ge=1)
    d_cls: Optional[int] = Field(None, ge=1)
    heads: int = Field(8, ge=1)
    classes: int = Field(4, ge=2)
    unit_encoder: bool = True
    word_encoder: bool = True
    merging: bool = True
    windows: Optional[Tuple[int, int, int]] = None
    merges: Optional[Tuple[int, int, int]] = None
    word_tokens: Optional[int] = Field(None, ge=1)
    seed: int = 0

    # input lengths
    max_len: int = Field(326, ge=1)
    length_policy: Literal["pad", "truncate", "none"] = "pad"

    # training
    epochs: int = Field(120, ge=1)
    learning_rate: float = Field(5e-4, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    batch_size: int = Field(32, ge=1)
    select_metric: Literal["WA", "UA", "WF1", "MF1"] = "WA"

    @field_validator("layers", "windows", "merges", mode="before")
    @classmethod
    def parse_int_list(cls, value: Any) -> Any:
        return _int_list(_optional(value))

    @field_validator("d_in", "d_ff", "d_cls", "word_tokens", "dataset", mode="before")
    @classmethod
    def parse_optional(cls, value: Any) -> Any:
        return _optional(value)

    @field_validator("select_metric", mode="before")
    @classmethod
    def upper_metric(cls, value: Any) -> Any:
        return value.upper() if isinstance(value, str) else value

    def duration_stats(self) -> DurationStats:
        return DurationStats(
            phone_short_ms=self.phone_short_ms,
            phone_long_ms=self.phone_long_ms,
            word_short_ms=self.word_short_ms,
            word_long_ms=self.word_long_ms,
            mismatch=self.mismatch,
        )

    def plan_overrides(self) -> Optional[PlanOverrides]:
        if self.windows is None and self.merges is None and self.word_tokens is None:
            return None
        return PlanOverrides(windows=self.windows, merges=self.merges, word_tokens=self.word_tokens)

    def ablations(self) -> Ablations:
        return Ablations(unit_encoder=self.unit_encoder, word_encoder=self.word_encoder, merging=self.merging)

    def plan(self, frames: Optional[int] = None, hop_ms: Optional[float] = None) -> StagePlan:
        """Stage plan for `frames` frames (max_len by default)"""
        return derive_stage_plan(
            self.duration_stats(),
            self.hop_ms if hop_ms is None else hop_ms,
            self.max_len if frames is None else frames,
            self.plan_overrides(),
            layers=self.layers,
            d=self.d,
            merging=self.merging,
        )

    def model_shape(self, d_in: Optional[int] = None) -> ModelShape:
        """Model widths; `d_in` from the data wins over the configured value"""
        return ModelShape(
            d=self.d,
            heads=self.heads,
            classes=self.classes,
            layers=self.layers,
            d_in=d_in if d_in is not None else self.d_in,
            d_ff=self.d_ff,
            d_cls=self.d_cls,
            word_tokens=self.plan().word_tokens,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            batch_size=self.batch_size,
            seed=self.seed,
            select_metric=self.select_metric,
        )


def parse_overrides(items: Optional[Iterable[str]]) -> Dict[str, str]:
    """Turn ["key=value", ...] into a dict"""
    from src.utils.config_validator import ConfigError

    overrides: Dict[str, str] = {}
    errors = []
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            errors.append(f"override '{item}' is not of the form key=value")
            continue
        overrides[key.strip().lower()] = value.strip()
    if errors:
        raise ConfigError("Configuration errors:\n" + "\n".join(f"- {error}" for error in errors))
    return overrides


def read_config_file(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    """Flat key=value file; keys are case-insensitive"""
    config_path = Path(path)
    if not config_path.is_file():
        raise FileNotFoundError(f"config file not found: {config_path}")
    return {key.lower(): value for key, value in dotenv_values(config_path).items()}


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    preset: Optional[str] = None,
    base: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Build a RunConfig from defaults, a dataset preset, a file and overrides

    Later sources win: defaults < preset < base < file < overrides. The preset
    is named by `preset` or by a `dataset` key in the file or overrides; `base`
    lets a command bring its own defaults.

    Raises:
        ConfigError: If any value is invalid; all problems are listed
        FileNotFoundError: If `path` does not exist
    """
    from src.utils.config_validator import ConfigError, validate_config
    from src.utils.logger import logger

    file_values: Dict[str, Any] = dict(read_config_file(path)) if path else {}
    override_values: Dict[str, Any] = {key.lower(): value for key, value in (overrides or {}).items()}

    name = override_values.get("dataset") or file_values.get("dataset") or preset
    values: Dict[str, Any] = {}
    if name:
        name = str(name).lower()
        if name not in DATASET_PRESETS:
            raise ConfigError(
                f"Configuration errors:\n- dataset '{name}' is unknown, must be one of {sorted(DATASET_PRESETS)}"
            )
        values.update(DATASET_PRESETS[name])
        values["dataset"] = name
    values.update(base or {})
    values.update({key: value for key, value in file_values.items() if value is not None})
    values.update(override_values)

    config = validate_config(values)
    logger.debug(f"Run config: {config.model_dump()}")
    return config


def get_log_level(default: str = "WARNING") -> str:
    """Log level from HIERFORM_LOG_LEVEL, after loading a .env file if there is one"""
    load_dotenv()
    return os.getenv(LOG_LEVEL_ENV, default).upper()
