"""Runtime configuration.

Values come from ``MITTAG_*`` environment variables or a local ``.env``
file, e.g. ``MITTAG_DEFAULT_SEED=7`` or ``MITTAG_WORKERS=4``.
"""

import logging
from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Defaults used when a caller does not pass an explicit value."""

    model_config = SettingsConfigDict(env_prefix="MITTAG_", env_file=".env", extra="ignore")

    default_seed: int = Field(20240611, description="Seed used by every stochastic routine when none is given")
    tol: float = Field(1e-10, gt=0, description="Default tolerance for special-function series")
    workers: int = Field(1, ge=1, description="Thread pool size for Monte Carlo batches")
    batch_size: int = Field(20_000, ge=1, description="Draws per RNG stream / batch")
    path_batch_size: int = Field(2_000, ge=1, description="Paths per batch when sampling whole trajectories")
    log_level: str = "INFO"


@lru_cache
def get_settings() -> Settings:
    settings = Settings()
    logger.debug(f"Loaded settings: {settings.model_dump()}")
    return settings
