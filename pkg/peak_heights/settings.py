from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class PeakSettings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix='PEAKS_',
        env_file='.env',
        env_file_encoding='utf-8',
        case_sensitive=False,
        extra='ignore',
    )

    seed: int = Field(20240521, ge=0)
    n_samples: int = Field(200_000, ge=1)
    # chunk count is part of the random-number layout, not of the parallelism
    mc_chunks: int = Field(16, ge=1)
    workers: int = Field(1, ge=1)

    abs_tol: float = Field(1e-10, gt=0)
    rel_tol: float = Field(1e-8, gt=0)
    truncation_radius: float = Field(10.0, ge=6)
    max_subdivisions: int = Field(2000, ge=10)

    log_level: str = 'INFO'


def get_settings() -> PeakSettings:
    return PeakSettings()
