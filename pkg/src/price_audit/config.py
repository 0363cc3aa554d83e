from __future__ import annotations

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .settings import Settings, settings

logger = logging.getLogger(__name__)

GENERIC_CRITERIA: tuple[str, ...] = ("build quality", "features", "brand reputation", "quantity")
LLM_PADDING_BOUNDS: tuple[float, float] = (0.10, 0.90)


class BackendConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["http", "mock"] = "http"
    endpoint: str = ""
    model_name: str = "chat-model"
    credential_env_var: str = "PRICE_AUDIT_API_KEY"
    temperature: float = Field(default=0.0, ge=0.0)
    timeout_seconds: float = Field(default=60.0, gt=0.0)
    max_retries: int = Field(default=3, ge=0)
    backoff_base_seconds: float = Field(default=1.0, ge=0.0)
    extra_headers: dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _http_needs_endpoint(self) -> BackendConfig:
        if self.kind == "http":
            if not self.endpoint:
                raise ValueError("http backend requires an endpoint")
            if not self.credential_env_var:
                raise ValueError("http backend requires credential_env_var")
        return self


class PaddingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    price_padding: float = Field(default=0.50, ge=0.0, lt=1.0)
    utility_padding: int = Field(default=0, ge=0)
    padding_mode: Literal["fixed", "llm"] = "fixed"


class AttributeMode(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["generic", "static", "dynamic", "weighted_dynamic"] = "generic"
    top_n: int = Field(default=5, ge=3)
    static_table: dict[str, list[str]] = Field(default_factory=dict)

    @property
    def weighted(self) -> bool:
        return self.mode == "weighted_dynamic"

    @property
    def dynamic(self) -> bool:
        return self.mode in ("dynamic", "weighted_dynamic")

    def attributes_for(self, category: str) -> list[str]:
        if self.mode != "static":
            raise ConfigError(f"attribute table lookup is only defined for static mode, not {self.mode}")
        attrs = self.static_table.get(category)
        if not attrs:
            raise ConfigError(f"static attribute table has no entry for category {category!r}")
        return list(attrs)

    def snapshot(self) -> dict[str, Any]:
        # The full table is config-file content; records keep only its shape.
        out: dict[str, Any] = {"mode": self.mode, "top_n": self.top_n}
        if self.mode == "static":
            out["static_categories"] = sorted(self.static_table)
        return out


def _implicit_mock_backend() -> BackendConfig:
    logger.warning("No backend configured; answering every agent with the offline mock oracle")
    return BackendConfig(kind="mock")


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(default=7, ge=1)
    padding: PaddingConfig = Field(default_factory=PaddingConfig)
    attribute_mode: AttributeMode = Field(default_factory=AttributeMode)
    strategy: Literal["veto", "voting"] = "veto"
    decision_mode: Literal["deterministic", "llm"] = "deterministic"
    backend: BackendConfig = Field(default_factory=_implicit_mock_backend)
    max_concurrency: int = Field(default=4, ge=1)
    parse_retries: int = Field(default=1, ge=0)
    fallback_dim: int = Field(default=256, ge=8)
    static_table_path: str | None = None

    def snapshot(self) -> dict[str, Any]:
        out = self.model_dump(mode="json", exclude={"attribute_mode"})
        out["attribute_mode"] = self.attribute_mode.snapshot()
        return out


def settings_defaults(base: Settings) -> dict[str, Any]:
    return {
        "backend": {
            "kind": base.backend,
            "endpoint": base.endpoint,
            "model_name": base.model_name,
            "credential_env_var": base.credential_env_var,
            "timeout_seconds": base.timeout_seconds,
            "max_retries": base.max_retries,
            "backoff_base_seconds": base.backoff_seconds,
        },
        "max_concurrency": base.max_concurrency,
        "fallback_dim": base.fallback_dim,
    }


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_pipeline_config(
    path: str | None = None,
    overrides: dict[str, Any] | None = None,
    base: Settings = settings,
    needs_backend: bool = True,
) -> PipelineConfig:
    """Resolve a PipelineConfig: settings defaults < JSON config file < overrides.

    With needs_backend=False the backend section is replaced by the offline mock,
    for commands that never call it.
    """
    merged = settings_defaults(base)
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            payload = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        merged = deep_merge(merged, payload)
    if overrides:
        merged = deep_merge(merged, overrides)
    if not needs_backend:
        merged["backend"] = {"kind": "mock"}

    try:
        config = PipelineConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(f"invalid pipeline config: {exc}") from exc

    if config.static_table_path and not config.attribute_mode.static_table:
        table = load_static_table(config.static_table_path)
        mode = config.attribute_mode.model_copy(update={"static_table": table})
        config = config.model_copy(update={"attribute_mode": mode})
    if config.attribute_mode.mode == "static" and not config.attribute_mode.static_table:
        raise ConfigError("static attribute mode needs a static_table or static_table_path")
    return config


def load_static_table(path: str) -> dict[str, list[str]]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"Static attribute table not found: {path}")

    table: dict[str, list[str]] = {}
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                category = str(row["category"])
                attributes = [str(a) for a in row["attributes"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ConfigError(f"line {lineno}: malformed static table row ({exc})") from exc
            if not attributes:
                raise ConfigError(f"line {lineno}: category {category!r} has no attributes")
            table[category] = attributes
    logger.info("Loaded static attribute table with %d categories from %s", len(table), path)
    return table


def save_static_table(table: dict[str, list[str]], path: str, version: str | None = None) -> Path:
    stamp = version or datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as f:
        for category in sorted(table):
            row = {"category": category, "attributes": table[category], "version": stamp}
            f.write(json.dumps(row) + "\n")
    return p
