from functools import lru_cache

from pydantic import BaseSettings, validator


class Settings(BaseSettings):
    # Upper bound on worker threads used while scoring users for evaluation
    threads: int = 1

    log_dir: str = "logs"

    # Users scored per chunk during full-catalog ranking
    eval_chunk_size: int = 1024

    @validator("threads", "eval_chunk_size")
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    class Config:
        env_prefix = "COMPLAT_"
        env_file = ".env"
        env_file_encoding = "utf-8"


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
