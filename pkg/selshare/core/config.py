from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    PROJECT_NAME: str = "Selective Sharing"

    # Runs
    OUTPUT_DIR: str = "runs"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    # Optimisation defaults (batch 64, lr 0.02, momentum 0.5)
    DEFAULT_BATCH_SIZE: int = 64
    DEFAULT_LEARNING_RATE: float = 0.02
    DEFAULT_MOMENTUM: float = 0.5
    DEFAULT_EPOCHS: int = 15

    # Factorization
    DEFAULT_TT_MODES: int = 4
    DEFAULT_TT_RANK: int = 4
    DEFAULT_TT_TOLERANCE: float = 1e-2

    # Clustering / grouping
    DEFAULT_DOMINANCE: float = 0.5
    DEFAULT_WARMUP_EPOCHS: int = 1
    LOCK_PATIENCE: int = 3

    # Desk-scale MNIST subset
    MNIST_TRAIN_SIZE: int = 10_000
    MNIST_VAL_SIZE: int = 2_000
    MNIST_TEST_SIZE: int = 2_000

    class Config:
        env_file = ".env"
        env_prefix = "SELSHARE_"
        extra = "ignore"


settings = Settings()
