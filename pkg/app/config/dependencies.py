from functools import lru_cache

from app.config.settings import Settings
from app.utils.monitoring import MetricsManager


@lru_cache(maxsize=None, typed=False)
def get_settings() -> Settings:
    return Settings()


@lru_cache(maxsize=None, typed=False)
def get_metrics_manager() -> MetricsManager:
    return MetricsManager()
