"""
Process settings loaded from environment variables
"""
import os
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings from environment variables"""

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Parallelism
    T1MOCO_THREADS: Optional[int] = None
    TORCH_INTRAOP_THREADS: int = 1

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_DIR: Optional[str] = None

    def worker_count(self) -> int:
        """Resolved number of frame/run workers (at least 1)"""
        if self.T1MOCO_THREADS is not None and self.T1MOCO_THREADS > 0:
            return self.T1MOCO_THREADS
        return max(1, os.cpu_count() or 1)


# Global settings instance
settings = Settings()
