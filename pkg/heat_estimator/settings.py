import json
import os
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    FilePath,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    field_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from heat_estimator.semidiscrete import DEFAULT_LAMBDAS


class LogLevel(StrEnum):
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class StudyKind(StrEnum):
    SOLVE = "solve"
    CONVERGENCE = "convergence"
    UPPER_BOUND = "upper-bound"
    EFFECTIVITY = "effectivity"
    APPENDIX_ODE = "appendix-ode"
    HYPERCIRCLE = "hypercircle"
    RESIDUAL_IDENTITY = "residual-identity"


class MeshFamily(StrEnum):
    INTERVAL = "interval"
    UNIT_SQUARE = "unit_square"


class TimeRule(StrEnum):
    UNIFORM = "uniform"
    TAU_EQ_H = "tau_eq_h"
    TAU_EQ_H_SQ = "tau_eq_h_sq"


class MeshSettings(BaseModel):
    family: MeshFamily = MeshFamily.UNIT_SQUARE
    resolution: PositiveInt = 4
    refinements: NonNegativeInt = 0
    mesh_file: Optional[FilePath] = None


class TimeSettings(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    final_time: PositiveFloat = Field(1.0, alias="T")
    steps: PositiveInt = 4
    rule: TimeRule = TimeRule.UNIFORM
    grading: PositiveFloat = 1.0  # ratio of consecutive steps; 1 is uniform


class ProblemSettings(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    name: str = "sin2d_decay"
    lam: PositiveFloat = Field(1.0, alias="lambda")
    lambdas: list[PositiveFloat] = list(DEFAULT_LAMBDAS)
    instances: PositiveInt = 200
    max_steps: PositiveInt = 16
    test_fields: PositiveInt = 20
    seed: int = 0


class SolverSettings(BaseModel):
    tol: PositiveFloat = 1e-12
    max_iters: Optional[PositiveInt] = None
    flux_degree: int = 2
    threads: PositiveInt | Literal["auto"] = 1

    @field_validator("flux_degree")
    @classmethod
    def check_flux_degree(cls, v: int) -> int:
        if v < 2:
            raise ValueError(f"flux_degree must be at least 2 for P1 elements, got {v}")
        return v

    @property
    def thread_count(self) -> int:
        if self.threads == "auto":
            return os.cpu_count() or 1
        return self.threads


class OutputSettings(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    csv_path: Optional[Path] = Field(None, alias="csv")
    json_path: Optional[Path] = Field(None, alias="json")
    dump_flux: bool = False
    log_level: LogLevel = LogLevel.INFO

    @field_validator("log_level", mode="before")
    @classmethod
    def set_log_level(cls, v: str) -> LogLevel:
        if isinstance(v, str):
            v = v.upper()
        if v in LogLevel._value2member_map_:
            return LogLevel(v)
        raise ValueError(f"Invalid log level: {v}")


class CheckSettings(BaseModel):
    bound_slack: PositiveFloat = 1e-9
    effectivity_bounds: tuple[PositiveFloat, PositiveFloat] = (0.5, 10.0)
    effectivity_growth: PositiveFloat = 1.5
    gamma: Optional[PositiveFloat] = None
    equilibration_rtol: PositiveFloat = 1e-9
    identity_rtol: PositiveFloat = 1e-8
    hypercircle_rtol: PositiveFloat = 1e-11


class Setting(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="HEAT_ESTIMATOR_", env_nested_delimiter="__"
    )

    study: StudyKind = StudyKind.SOLVE
    mesh: MeshSettings = MeshSettings()
    time: TimeSettings = TimeSettings()
    problem: ProblemSettings = ProblemSettings()
    solver: SolverSettings = SolverSettings()
    output: OutputSettings = OutputSettings()
    check: CheckSettings = CheckSettings()


def _load_config(config_path: Optional[Path]) -> dict[str, Any]:
    if config_path is None:
        return {}
    data = json.loads(Path(config_path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{config_path}: the configuration must be a JSON object")
    return data


class SettingsManager:
    _setting_instance: Optional[Setting] = None

    @classmethod
    def get_setting(cls) -> Setting:
        if cls._setting_instance is None:
            cls._setting_instance = Setting()
        return cls._setting_instance

    @classmethod
    def initialize_from_file(cls, config_path: Path) -> Setting:
        cls._setting_instance = Setting(**_load_config(config_path))
        return cls._setting_instance

    @classmethod
    def initialize_with_params(
        cls,
        study: str,
        config_path: Optional[Path] = None,
        threads: Optional[int] = None,
        csv_path: Optional[Path] = None,
        json_path: Optional[Path] = None,
        dump_flux: bool = False,
        log_level: Optional[str] = None,
    ) -> Setting:
        """Build the settings from an optional JSON file and command-line overrides."""
        data = _load_config(config_path)
        data["study"] = study
        solver = data.setdefault("solver", {})
        output = data.setdefault("output", {})
        if threads is not None:
            solver["threads"] = threads
        if csv_path is not None:
            output["csv_path"] = csv_path
            output.pop("csv", None)
        if json_path is not None:
            output["json_path"] = json_path
            output.pop("json", None)
        if dump_flux:
            output["dump_flux"] = True
        if log_level is not None:
            output["log_level"] = log_level
        cls._setting_instance = Setting(**data)
        return cls._setting_instance
