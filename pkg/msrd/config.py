"""Application configuration"""
from pydantic_settings import BaseSettings
from typing import List


class Settings(BaseSettings):
    """Application settings"""

    PROJECT_NAME: str = "msrd"
    VERSION: str = "0.3.0"
    LOG_LEVEL: str = "INFO"

    # Run defaults
    SEED: int = 20240917
    OUTPUT_DIR: str = "results"
    WORKERS: int = 1

    # Event engine
    MAX_EVENTS: int = 50_000_000
    REBUILD_INTERVAL: int = 2 ** 20
    POSITIVITY_TOL: float = 1e-12
    MAX_CHANNELS_ENUMERATED: int = 100_000

    # Deterministic limit
    LIMIT_DT: float = 1e-3
    LIMIT_TOL: float = 1e-8
    LIMIT_MAX_HALVINGS: int = 6
    NEGATIVITY_TOL: float = 1e-10

    # Experiment harness
    SAMPLE_POINTS: int = 201
    EPSILON_LEVELS: List[float] = [0.05, 0.1, 0.2]
    Z_THRESHOLD: float = 4.0

    # MongoDB log sink (empty URI keeps logging local)
    MONGO_URI: str = ""
    MONGO_DB_NAME: str = "msrd_logs"

    class Config:
        env_file = ".env"
        env_prefix = "MSRD_"
        case_sensitive = True


settings = Settings()
