from __future__ import annotations

import threading
import time
from collections.abc import Callable

import pytest

from price_audit.catalog import Catalog
from price_audit.config import BackendConfig, PipelineConfig
from price_audit.llm_gateway import BackendReply, Gateway, MockBackend
from price_audit.synthetic import planted_outlier_catalog
from price_audit.types import ChatRequest, Product


class ScriptedBackend:
    """Replays queued replies; an Exception entry is raised instead of returned."""

    def __init__(self, replies: list[str | Exception]) -> None:
        self.replies = list(replies)
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def send(self, request: ChatRequest) -> BackendReply:
        with self._lock:
            self.requests.append(request)
            item = self.replies.pop(0)
        if isinstance(item, Exception):
            raise item
        return BackendReply(text=item, prompt_tokens=10, completion_tokens=5)


class SlowMockBackend(MockBackend):
    def __init__(self, delay: float = 0.02) -> None:
        self.delay = delay

    def send(self, request: ChatRequest) -> BackendReply:
        time.sleep(self.delay)
        return super().send(request)


class FailingBackend:
    def __init__(self, exc: Exception) -> None:
        self.exc = exc
        self.calls = 0

    def send(self, request: ChatRequest) -> BackendReply:
        self.calls += 1
        raise self.exc


@pytest.fixture
def mock_config() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture
def mock_gateway() -> Gateway:
    return Gateway(BackendConfig(kind="mock"))


@pytest.fixture
def scripted_gateway() -> Callable[..., Gateway]:
    def make(replies: list[str | Exception], max_retries: int = 2) -> Gateway:
        config = BackendConfig(kind="mock", max_retries=max_retries, backoff_base_seconds=0.0)
        return Gateway(config, backend=ScriptedBackend(replies))

    return make


@pytest.fixture(scope="session")
def planted_catalog() -> Catalog:
    return planted_outlier_catalog()


@pytest.fixture
def make_product() -> Callable[..., Product]:
    def make(pid: str, title: str, price: float, category: str = "computer mice", **attributes: str) -> Product:
        return Product(id=pid, title=title, category=category, price=price, attributes=dict(attributes))

    return make
