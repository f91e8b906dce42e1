"""
CFN Lab Configuration
Process-wide numerical guards and run defaults
"""

import os
from functools import lru_cache
from typing import Tuple, Type

from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict


class Settings(BaseSettings):
    """Settings shared by the solvers, the trainer and the CLI."""

    # Numerical guards
    slope_eps: float = 1e-14
    quotient_eps: float = 1e-12

    # Reference solver
    reference_cfl: float = 0.4

    # Training
    sentinel_loss: float = 1e6
    default_workers: int = max(1, os.cpu_count() or 1)

    # Output
    csv_digits: int = 17
    log_level: str = "INFO"
    format_version: int = 1

    model_config = SettingsConfigDict(extra="ignore")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # Explicit values only: runs must not change behaviour with the environment.
        return (init_settings,)


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


settings = get_settings()
