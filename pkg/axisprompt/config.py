"""Application settings and the declarative pipeline configuration."""

import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel, Field, ValidationInfo, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from axisprompt.models import RGB, MarkVariant, OracleConfig, TaskKind, Vec3

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Application
    app_name: str = "axisprompt"
    app_version: str = "0.1.0"

    # Logging
    log_level: str = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Output
    output_dir: str = "runs"
    transcript_name: str = "transcript.jsonl"
    results_name: str = "results.jsonl"
    summary_name: str = "summary.csv"
    report_name: str = "report.md"

    # HTTP
    user_agent: str = "axisprompt/0.1.0"

    model_config = SettingsConfigDict(
        env_prefix="AXISPROMPT_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    def get_log_level(self) -> int:
        """Resolve the configured level name to a logging constant."""
        return logging.getLevelName(self.log_level.upper()) if self.log_level else logging.INFO


# Global settings instance
settings = Settings()


class SceneAdapter(str, Enum):
    GENERIC_PLY = "generic_ply"
    SCANNET = "scannet"
    XYZ = "xyz"


InstanceRef = Union[int, str]


class SceneSpec(BaseModel):
    """One scene file and the per-scene task references."""

    id: str = Field(..., min_length=1, description="Scene identifier", examples=["scene0000_00"])
    path: Path = Field(..., description="Point file (PLY or XYZ)")
    adapter: SceneAdapter = SceneAdapter.GENERIC_PLY
    up_axis: Optional[int] = Field(
        2, ge=0, le=2, description="World axis pointing up; null requests full 3D alignment"
    )
    label_map: Optional[Path] = Field(None, description="Raw-to-canonical label table (scannet)")
    mask_dir: Optional[Path] = Field(None, description="Directory of view{j}_inst{i}.png masks")
    targets: List[InstanceRef] = Field(
        default_factory=list, description="Instance ids or labels; empty means every marked object"
    )
    start: Optional[InstanceRef] = None
    goal: Optional[InstanceRef] = None
    description: Optional[str] = Field(None, description="Referring expression (ground_box)")
    keypoints: Dict[str, Vec3] = Field(default_factory=dict)
    skeleton: Optional[str] = Field(None, description="Skeleton template name (keypoints)")

    @field_validator("path", "label_map", "mask_dir")
    @classmethod
    def _exists(cls, value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
        if value is not None and not value.exists():
            raise ValueError(f"{info.field_name} does not exist: {value}")
        return value


class RigConfig(BaseModel):
    mode: Literal["multiview", "triview"] = "multiview"
    n_views: int = Field(8, ge=1)
    elevation: float = Field(35.0, gt=-90, lt=90, description="Degrees above the horizon")
    distance_scale: float = Field(1.2, gt=0)
    image_size: int = Field(1024, ge=16)
    fov_deg: float = Field(60.0, gt=0, lt=180)
    splat_px: int = Field(2, ge=1)
    depth_images: bool = Field(False, description="Append a grayscale depth raster per view")


class AxisConfig(BaseModel):
    tick_interval: Optional[float] = Field(
        None, gt=0, description="Meters between ticks; default 0.5 indoor, 5 outdoor"
    )
    tick_size: Optional[float] = Field(None, gt=0)
    show_ticks: bool = True
    show_labels: bool = True
    label_decimals: Optional[int] = Field(None, ge=0)


class MarkConfig(BaseModel):
    style: Optional[MarkVariant] = MarkVariant.MARK_PLUS_CONTOUR
    palette: Optional[List[RGB]] = None
    dilation_px: int = Field(4, ge=0)
    max_marks: int = Field(23, ge=0, le=23)


class PointsTextConfig(BaseModel):
    enabled: bool = True
    budget: int = Field(2048, ge=1)
    decimals: int = Field(2, ge=0)


class TaskConfig(BaseModel):
    kind: TaskKind = TaskKind.LOCALIZE
    cot: bool = False
    reference_hint: bool = False
    slots: Dict[str, str] = Field(default_factory=dict)
    box_format: Literal["min_max", "center_size"] = "min_max"


class EndpointConfig(BaseModel):
    """Chat-completions endpoint; the API key is read from the named variable."""

    url: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    api_key_env: Optional[str] = "OPENAI_API_KEY"
    headers: Dict[str, str] = Field(default_factory=dict)
    max_in_flight: int = Field(2, ge=1)
    temperature: float = Field(0.0, ge=0)
    max_tokens: int = Field(1024, gt=0)
    image_detail: Optional[Literal["low", "high", "auto"]] = None
    timeout_s: float = Field(120.0, gt=0)
    max_attempts: int = Field(5, ge=1)
    backoff_base: float = Field(1.0, ge=0)
    backoff_factor: float = Field(2.0, ge=1)


class EvalConfig(BaseModel):
    clearance: float = Field(0.15, ge=0)
    tolerance: float = Field(0.15, ge=0, description="Arrival slack for route endpoints")
    slack: float = Field(0.05, ge=0)
    normalizer: Literal["extent", "diagonal"] = "extent"
    check_collisions: bool = True


class PipelineConfig(BaseModel):
    """Every knob of a render / evaluate / ablate run."""

    scenes: List[SceneSpec] = Field(..., min_length=1)
    align: Literal["pca", "none"] = "pca"
    rig: RigConfig = Field(default_factory=RigConfig)
    axis: AxisConfig = Field(default_factory=AxisConfig)
    marks: MarkConfig = Field(default_factory=MarkConfig)
    points_text: PointsTextConfig = Field(default_factory=PointsTextConfig)
    task: TaskConfig = Field(default_factory=TaskConfig)
    endpoint: EndpointConfig = Field(default_factory=EndpointConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    output_dir: Path = Path(settings.output_dir)
    seed: int = Field(0, description="Run seed; also seeds the mock oracle")
    workers: int = Field(2, ge=1, description="Scenes rendered in parallel")

    @model_validator(mode="after")
    def _unique_scenes(self) -> "PipelineConfig":
        ids = [scene.id for scene in self.scenes]
        if len(set(ids)) != len(ids):
            raise ValueError("scene ids must be unique")
        return self

    def oracle_config(self) -> OracleConfig:
        """Oracle settings, seeded from the run seed unless oracle.seed is set."""
        if "seed" in self.oracle.model_fields_set:
            return self.oracle
        return self.oracle.model_copy(update={"seed": self.seed})

    def with_overrides(self, overrides: Dict[str, Any]) -> "PipelineConfig":
        """Validated copy with dotted-key overrides applied."""
        raw = self.model_dump(mode="python", exclude_unset=True)
        for key, value in overrides.items():
            apply_override(raw, key, value)
        return PipelineConfig.model_validate(raw)


def apply_override(raw: Dict[str, Any], dotted_key: str, value: Any) -> None:
    """Set raw[a][b][c] = value for a dotted key "a.b.c"."""
    parts = dotted_key.split(".")
    node = raw
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def parse_override(expression: str) -> Tuple[str, Any]:
    """
    Parse a "dotted.key=value" command-line override.

    The value is read as a YAML scalar, so "4" is an int and "false" a bool.
    """
    if "=" not in expression:
        raise ValueError(f"override must look like key=value, got '{expression}'")
    key, text = expression.split("=", 1)
    return key.strip(), yaml.safe_load(text)


def _resolve_paths(raw: Dict[str, Any], base: Path) -> None:
    for scene in raw.get("scenes") or []:
        if not isinstance(scene, dict):
            continue
        for key in ("path", "label_map", "mask_dir"):
            if scene.get(key):
                path = Path(scene[key])
                scene[key] = path if path.is_absolute() else base / path
    if raw.get("output_dir"):
        path = Path(raw["output_dir"])
        raw["output_dir"] = path if path.is_absolute() else base / path


def load_pipeline_config(
    path: Path, overrides: Optional[Sequence[Tuple[str, Any]]] = None
) -> PipelineConfig:
    """
    Load a pipeline configuration file.

    Args:
        path: YAML configuration file
        overrides: (dotted key, value) pairs applied before validation

    Returns:
        Validated PipelineConfig

    Raises:
        ValueError: If the file is not a YAML mapping
        pydantic.ValidationError: If the configuration is invalid
    """
    with open(path, encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"configuration must be a mapping: {path}")
    for key, value in overrides or []:
        apply_override(raw, key, value)
    _resolve_paths(raw, path.parent)
    config = PipelineConfig.model_validate(raw)
    logger.info(f"Loaded configuration with {len(config.scenes)} scenes from {path}")
    return config
