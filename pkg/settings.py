"""
Environment settings for phi-kit.
Values come from PHI_KIT_* variables or an optional .env file.
"""
import os
from functools import lru_cache

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


def _default_threads() -> int:
    return max(1, min(4, os.cpu_count() or 1))


class Settings(BaseSettings):
    """Process-wide knobs that are not part of a run config."""

    model_config = SettingsConfigDict(env_prefix="PHI_KIT_", extra="ignore")

    # Cap on concurrent runs in a convergence sweep
    threads: int = Field(default_factory=_default_threads, ge=1)
    # Force tqdm progress bars even without --verbose
    progress: bool = False


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Load settings once per process."""
    return Settings()
