from typing import Optional
from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings with environment variable support."""

    # Application Settings
    APP_NAME: str = "hybrid-aif"
    DEBUG: bool = False
    ENVIRONMENT: str = Field("development", description="Application environment")

    # Logging
    LOG_LEVEL: str = Field("INFO", description="Logging level")
    LOG_DIR: str = Field("logs", description="Directory for rotating log files")
    LOG_TO_FILE: bool = Field(True, description="Write rotating log files")
    LOG_RETENTION_DAYS: int = 30

    # Monitoring
    SENTRY_DSN: Optional[str] = Field(None, description="Sentry DSN")
    ENABLE_METRICS: bool = Field(True, description="Write Prometheus text files per run")

    # Runs
    OUTPUT_DIR: str = Field("runs", description="Default output directory for run artifacts")
    SCENARIO_DIR: Optional[str] = Field(
        None, description="Extra directory searched for scenario names"
    )
    MAX_WORKERS: int = Field(4, description="Worker threads for run --all")

    # Plotting
    PLOT_HASH_SALT: str = Field("hybrid-aif", description="Fixed SVG id salt")

    class Config:
        env_file = ".env"
        frozen = True
        case_sensitive = True
        extra = "allow"
