from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    backend: Literal["http", "mock"] = Field(default="http", alias="PRICE_AUDIT_BACKEND")
    endpoint: str = Field(default="", alias="PRICE_AUDIT_ENDPOINT")
    model_name: str = Field(default="chat-model", alias="PRICE_AUDIT_MODEL")
    credential_env_var: str = Field(default="PRICE_AUDIT_API_KEY", alias="PRICE_AUDIT_CREDENTIAL_ENV")

    timeout_seconds: float = Field(default=60.0, alias="PRICE_AUDIT_TIMEOUT_SECONDS")
    max_retries: int = Field(default=3, alias="PRICE_AUDIT_MAX_RETRIES")
    backoff_seconds: float = Field(default=1.0, alias="PRICE_AUDIT_BACKOFF_SECONDS")
    max_concurrency: int = Field(default=4, alias="PRICE_AUDIT_MAX_CONCURRENCY")

    fallback_dim: int = Field(default=256, alias="PRICE_AUDIT_FALLBACK_DIM")
    log_level: str = Field(default="INFO", alias="PRICE_AUDIT_LOG_LEVEL")


settings = Settings()
