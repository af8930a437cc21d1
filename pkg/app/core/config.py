from pydantic_settings import BaseSettings, NoDecode, PydanticBaseSettingsSource, SettingsConfigDict
from pydantic import Field, AliasChoices, field_validator
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Type

# Project root directory
BASE_DIR = Path(__file__).resolve().parent.parent.parent
ENV_FILE = BASE_DIR / ".env"
SCENARIO_DIR = BASE_DIR / "scenarios"


class Settings(BaseSettings):
    # Logging
    log_level: str = Field(
        default="INFO",
        validation_alias=AliasChoices("log_level", "EXPLORER_LOG_LEVEL")
    )

    # Output directory used when --out is not given
    output_dir: Path = Field(
        default=Path("results"),
        validation_alias=AliasChoices("output_dir", "EXPLORER_OUTPUT_DIR")
    )

    # Worker processes for exhaustive sweeps
    threads: int = Field(
        default=1,
        ge=1,
        validation_alias=AliasChoices("threads", "EXPLORER_THREADS")
    )

    # Largest state space a single build may reach before it is rejected
    state_limit: int = Field(
        default=5_000_000,
        ge=1,
        validation_alias=AliasChoices("state_limit", "EXPLORER_STATE_LIMIT")
    )

    # Allowed difference between checker and oracle values
    oracle_tolerance: float = Field(
        default=1e-9,
        gt=0,
        validation_alias=AliasChoices("oracle_tolerance", "EXPLORER_ORACLE_TOLERANCE")
    )

    model_config = SettingsConfigDict(
        env_file=str(ENV_FILE),    # optional, env vars take precedence
        env_file_encoding="utf-8-sig",
        extra="ignore",
        case_sensitive=False
    )


def get_settings(testing: bool = False) -> Settings:
    settings = Settings()
    if testing:
        settings.state_limit = 200_000
        settings.log_level = "DEBUG"
    return settings


def _split_csv(value):
    """Turn 'a,b,c' into ['a', 'b', 'c']; other inputs pass through."""
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class ScenarioFile(BaseSettings):
    """
    A scenario file: KEY=VALUE lines in dotenv syntax.

    Only the file itself and explicit keyword overrides are consulted, never
    the process environment, so the file alone determines a run.
    """

    grid_width: int = 7
    grid_height: int = 7
    robot_start: Annotated[Tuple[int, int], NoDecode] = (4, 4)
    human_start: Annotated[Tuple[int, int], NoDecode] = (5, 5)
    station: Annotated[Tuple[int, int], NoDecode] = (0, 0)
    capacities: Annotated[List[int], NoDecode] = [25, 20, 15, 10, 5, 4, 3, 2, 1]
    min_energy: int = 2
    horizon: int = 20
    arrival_prob: float = 0.0
    human_stay_prob: Optional[float] = None
    all_start_positions: bool = False
    expand_resolved: bool = False
    swept_parameter: Literal["capacity", "min_energy", "horizon"] = "capacity"
    # values for a parameter other than capacity; capacity sweeps use CAPACITIES
    swept_values: Annotated[List[int], NoDecode] = []
    velocity_levels: Annotated[List[int], NoDecode] = [1, 2, 3, 4, 5, 6]
    service_time_levels: Annotated[List[int], NoDecode] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
    rho: Annotated[List[float], NoDecode] = [0.9]
    mode: Literal["exhaustive", "adaptive"] = "exhaustive"
    filter: Literal["min", "average"] = "min"

    model_config = SettingsConfigDict(
        env_file_encoding="utf-8-sig",
        extra="forbid",
        case_sensitive=False
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, dotenv_settings

    @field_validator("robot_start", "human_start", "station", "capacities", "swept_values",
                     "velocity_levels", "service_time_levels", "rho", mode="before")
    @classmethod
    def _parse_lists(cls, value):
        return _split_csv(value)

    @field_validator("human_stay_prob", mode="before")
    @classmethod
    def _blank_is_uniform(cls, value):
        if isinstance(value, str) and value.strip() == "":
            return None
        return value


def load_scenario(path, **overrides) -> ScenarioFile:
    """Read a scenario file; keyword overrides win over the file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scenario file not found at {path}")
    return ScenarioFile(_env_file=str(path), **overrides)
