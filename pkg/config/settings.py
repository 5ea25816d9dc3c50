"""Configuration file for the project"""

import logging
import os
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator

from src.domain.exceptions import ConfigError, InvalidArgumentError
from src.domain.metrics import EMPTY_PRICE_TABLE, PriceTable
from src.domain.segmentation import DEFAULT_TOC_HEADINGS, SegmentationThresholds

logger = logging.getLogger(__name__)


@dataclass
class Config:
    """Process-level configuration"""

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Artifacts
    OUTPUT_DIR: str = os.getenv("REGKG_OUTPUT_DIR", "./regkg_out")

    # Replay store
    REPLAY_DATABASE_URL: str = os.getenv("REPLAY_DATABASE_URL", "sqlite:///./regkg_replay.db")

    # Name of the variable holding the live backend key (never the key itself)
    API_KEY_ENV: str = os.getenv("REGKG_API_KEY_ENV", "REGKG_API_KEY")


config = Config()


class BackendKind(str, Enum):
    LIVE = "live"
    REPLAY = "replay"
    ORACLE = "oracle"


class PromptModeSetting(str, Enum):
    ONTOLOGY = "ontology"
    BASELINE = "baseline"


class BackendSettings(BaseModel):
    """Completion backend section"""
    kind: BackendKind = BackendKind.ORACLE
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    api_style: str = "openai"
    model: str = "gpt-4o"
    temperature: float = 0.1
    max_tokens: int = 16000
    timeout_seconds: float = 120.0
    max_retries: int = 2
    api_key_env: str = Field(default_factory=lambda: config.API_KEY_ENV)
    replay_database_url: str = Field(default_factory=lambda: config.REPLAY_DATABASE_URL)
    record: bool = False
    oracle_path: Optional[str] = None

    @field_validator("temperature")
    @classmethod
    def _temperature_range(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"temperature must be in [0, 1], got {value}")
        return value

    @field_validator("max_tokens")
    @classmethod
    def _positive_tokens(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"max_tokens must be >= 1, got {value}")
        return value

    @field_validator("api_style")
    @classmethod
    def _known_style(cls, value: str) -> str:
        if value not in ("openai", "anthropic"):
            raise ValueError(f"api_style must be 'openai' or 'anthropic', got {value!r}")
        return value


class SegmentationSettings(BaseModel):
    toc_min_lines: int = 3
    header_repeat_ratio: float = 0.6
    toc_headings: List[str] = list(DEFAULT_TOC_HEADINGS)

    @field_validator("toc_min_lines")
    @classmethod
    def _min_lines(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"toc_min_lines must be >= 1, got {value}")
        return value

    @field_validator("header_repeat_ratio")
    @classmethod
    def _ratio(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ValueError(f"header_repeat_ratio must be in (0, 1], got {value}")
        return value

    def thresholds(self) -> SegmentationThresholds:
        return SegmentationThresholds(
            toc_min_lines=self.toc_min_lines,
            header_repeat_ratio=self.header_repeat_ratio,
            toc_headings=tuple(h.strip().lower() for h in self.toc_headings),
        )


class PipelineConfig(BaseModel):
    """Per-run configuration loaded from YAML"""
    backend: BackendSettings = Field(default_factory=BackendSettings)
    price_table: Union[str, Dict[str, Any], None] = None
    mode: PromptModeSetting = PromptModeSetting.ONTOLOGY
    parallelism: int = 1
    segmentation: SegmentationSettings = Field(default_factory=SegmentationSettings)
    output_dir: str = Field(default_factory=lambda: config.OUTPUT_DIR)

    @field_validator("parallelism")
    @classmethod
    def _parallelism(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"parallelism must be >= 1, got {value}")
        return value


_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def expand_env(value: Any) -> Any:
    """Replace ${VAR} in every string of a nested structure"""
    if isinstance(value, str):
        def _sub(match: re.Match) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"Environment variable {name} referenced in config is not set")
            return os.environ[name]
        return _ENV_RE.sub(_sub, value)
    if isinstance(value, dict):
        return {k: expand_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [expand_env(v) for v in value]
    return value


def _load_yaml(path: Union[str, Path]) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot parse {path}: {e}")


def build_pipeline_config(data: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    try:
        return PipelineConfig(**expand_env(data or {}))
    except ValidationError as e:
        raise ConfigError(f"Invalid pipeline config: {e}")


def load_pipeline_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """Load YAML config; no path gives the defaults"""
    if path is None:
        return build_pipeline_config({})
    data = _load_yaml(path) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "api_key" in (data.get("backend") or {}):
        raise ConfigError(f"{path}: API keys are read from the environment only; set backend.api_key_env")
    pipeline = build_pipeline_config(data)
    # relative paths in the config are relative to the config file
    base = Path(path).parent
    if isinstance(pipeline.price_table, str) and not Path(pipeline.price_table).is_absolute():
        pipeline.price_table = str(base / pipeline.price_table)
    if pipeline.backend.oracle_path and not Path(pipeline.backend.oracle_path).is_absolute():
        pipeline.backend.oracle_path = str(base / pipeline.backend.oracle_path)
    return pipeline


def load_price_table(source: Union[str, Path, Dict[str, Any], None]) -> PriceTable:
    """Price table from a YAML path or an inline mapping"""
    if source is None:
        return EMPTY_PRICE_TABLE
    data = source if isinstance(source, dict) else _load_yaml(source)
    if not isinstance(data, dict):
        raise ConfigError(f"Price table must be a mapping, got {type(data).__name__}")
    try:
        return PriceTable.from_dict(data)
    except InvalidArgumentError as e:
        raise ConfigError(str(e))
