"""
Run configuration schema.

A run is described by one JSON file with a section per concern. Unknown keys
are rejected everywhere, and command-line flags are applied on top of the
file as dotted-key overrides before validation, so the validated object is
exactly what the run uses. It is written back as resolved_config.json.
"""

from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

import config
from .errors import ConfigValidationError
from .utils import load_json_file


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FactorSection(_Section):
    center_uv: Tuple[float, float]
    radius: float = Field(..., gt=0)
    amplitude: Tuple[float, float]
    mirrored: bool = False


class HierarchySection(_Section):
    base_rows: int = Field(config.DEFAULT_BASE_DIMS[0], ge=2)
    base_cols: int = Field(config.DEFAULT_BASE_DIMS[1], ge=2)
    levels: int = Field(config.DEFAULT_LEVELS, ge=0)


class SynthSection(_Section):
    T: int = Field(20, ge=2)
    width: float = Field(160.0, gt=0)
    height: float = Field(120.0, gt=0)
    noise_stddev: float = Field(0.0, ge=0)
    pose_jitter: float = Field(0.0, ge=0)
    seed: int = config.DEFAULT_SEED
    factors: Optional[List[FactorSection]] = None


class TrainSection(_Section):
    models: List[Literal["global", "local"]] = ["global", "local"]
    d: int = Field(config.DEFAULT_D, ge=1)
    gpa: bool = True


class FitSection(_Section):
    model: Literal["global", "local"] = "global"
    tau: float = Field(config.DEFAULT_TAU, gt=0)
    c: float = Field(config.DEFAULT_C, ge=0)
    max_iterations: int = Field(config.DEFAULT_MAX_ITERATIONS, ge=1)
    samples_per_parameter: int = Field(config.DEFAULT_SAMPLES_PER_PARAMETER, ge=2)
    max_level: Optional[int] = Field(None, ge=0)
    max_level_sweep: Optional[List[int]] = None
    tolerance: float = Field(config.DEFAULT_TOLERANCE, ge=0)
    noise_stddev: float = Field(0.0, ge=0)
    occlusion: Optional[Literal["left_eye_hand", "mouth_hand", "hair"]] = None
    targets: Optional[List[int]] = None
    seed: int = config.DEFAULT_SEED

    @field_validator("max_level_sweep")
    @classmethod
    def _non_negative_levels(cls, levels):
        if levels is not None and any(level < 0 for level in levels):
            raise ValueError("sweep levels must be >= 0")
        return levels


class EvaluateSection(_Section):
    specificity_samples: int = Field(config.DEFAULT_SPECIFICITY_SAMPLES, ge=1)
    folds: int = Field(config.DEFAULT_FOLDS, ge=2)
    seed: int = config.DEFAULT_SEED
    cross_validate: bool = True
    occlusion_preset: Literal["left_eye_hand", "mouth_hand", "hair"] = "left_eye_hand"
    occlusion_trials: int = Field(20, ge=0)
    control_uv: Tuple[float, float] = (0.35, 0.75)
    control_radius: float = Field(25.0, gt=0)


class PathsSection(_Section):
    corpus_dir: Optional[str] = None
    model_global: Optional[str] = None
    model_local: Optional[str] = None
    target: Optional[str] = None
    target_landmarks: Optional[str] = None
    input_mesh: Optional[str] = None
    runs_dir: str = config.RUNS_DIR
    run_name: str = "run"


class RunConfig(_Section):
    hierarchy: HierarchySection = HierarchySection()
    synth: SynthSection = SynthSection()
    train: TrainSection = TrainSection()
    fit: FitSection = FitSection()
    evaluate: EvaluateSection = EvaluateSection()
    paths: PathsSection = PathsSection()
    jobs: int = Field(1, ge=1)

    def resolved(self):
        return self.model_dump(mode="json")


def _apply_override(data, dotted_key, value):
    node = data
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigValidationError(f"{dotted_key}: '{part}' is not a section")
    node[parts[-1]] = value


def load_run_config(path=None, overrides=None):
    """
    Load and validate a run config.

    Args:
        path: JSON file, or None for all defaults
        overrides: {"section.key": value}; None values are ignored

    Raises:
        ConfigValidationError: naming the offending key
        FileNotFoundError: config file missing
    """
    data = {}
    if path is not None:
        data = load_json_file(Path(path), "run config")
        if not isinstance(data, dict):
            raise ConfigValidationError(f"run config {path} must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            _apply_override(data, key, value)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigValidationError(f"{key}: {first['msg']}") from e
