from __future__ import annotations

import json
import logging
import os
import re
import threading
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Any, Protocol, TypeVar

import requests
from tenacity import RetryCallState, Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from .catalog import title_tokens
from .config import BackendConfig
from .errors import BackendExhaustedError, BackendTimeoutError, ConfigError, GatewayError, ParseError
from .types import CallUsage, ChatRequest, ChatResponse

logger = logging.getLogger(__name__)

T = TypeVar("T")

MOCK_RELEVANCE_MIN_JACCARD = 0.2
MOCK_PADDING = 0.40
MOCK_HEAVY_ATTRIBUTES = frozenset({"brand", "quantity"})
MOCK_TABLE_ATTRIBUTES = ["brand", "quantity", "build quality", "features"]

_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)
_NUMBER_RE = re.compile(r"^\s*([-+]?\d+(?:\.\d+)?)\s*[A-Za-z%\"']*\s*$")
_RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class TransientBackendError(GatewayError):
    def __init__(self, message: str, timeout: bool = False) -> None:
        super().__init__(message)
        self.timeout = timeout


@dataclass(frozen=True)
class BackendReply:
    text: str
    prompt_tokens: int
    completion_tokens: int
    usage_reported: bool = True


class ChatBackend(Protocol):
    def send(self, request: ChatRequest) -> BackendReply: ...


class MockBackend:
    """Offline backend answering from mock_oracle; byte-for-byte deterministic."""

    def send(self, request: ChatRequest) -> BackendReply:
        if request.role is None or request.payload is None:
            raise GatewayError("mock backend needs a request role and payload")
        text = json.dumps(mock_oracle(request.role, request.payload), sort_keys=True)
        prompt_tokens = len(request.system_prompt.split()) + len(request.user_message.split())
        return BackendReply(text=text, prompt_tokens=prompt_tokens, completion_tokens=len(text.split()))


class HttpBackend:
    def __init__(
        self,
        config: BackendConfig,
        session: Any | None = None,
        environ: Mapping[str, str] | None = None,
    ) -> None:
        env = os.environ if environ is None else environ
        key = env.get(config.credential_env_var, "").strip()
        if not key:
            raise ConfigError(
                f"Credential variable {config.credential_env_var} is not set. Export it or add it to .env."
            )
        self.config = config
        self.session = session if session is not None else requests.Session()
        self.headers = {
            "Content-Type": "application/json",
            "Authorization": f"Bearer {key}",
            **config.extra_headers,
        }

    def send(self, request: ChatRequest) -> BackendReply:
        body = {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_message},
            ],
            "temperature": request.temperature,
        }
        try:
            resp = self.session.post(
                self.config.endpoint,
                json=body,
                headers=self.headers,
                timeout=request.timeout_seconds,
            )
        except requests.Timeout as exc:
            raise TransientBackendError(f"request timed out after {request.timeout_seconds}s", timeout=True) from exc
        except requests.ConnectionError as exc:
            raise TransientBackendError(f"connection failed: {exc}") from exc

        if resp.status_code in _RETRYABLE_STATUS:
            raise TransientBackendError(f"backend returned HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayError(f"backend returned HTTP {resp.status_code}: {resp.text[:200]}")

        try:
            payload = resp.json()
        except ValueError as exc:
            raise GatewayError("backend response body is not JSON") from exc
        return BackendReply(*_reply_fields(payload))


def _shape_error() -> GatewayError:
    return GatewayError("backend response has unexpected shape")


def _token_count(value: Any) -> int:
    if value is None:
        return 0
    if isinstance(value, bool):
        raise _shape_error()
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise _shape_error() from exc


def _reply_fields(payload: Any) -> tuple[str, int, int, bool]:
    if not isinstance(payload, dict):
        raise _shape_error()
    text: Any = None
    choices = payload.get("choices")
    if isinstance(choices, list) and choices:
        first = choices[0] if choices[0] is not None else {}
        if not isinstance(first, dict):
            raise _shape_error()
        message = first.get("message") or {}
        text = message.get("content") if isinstance(message, dict) else None
        if text is None:
            text = first.get("text")
    if text is None:
        content = payload.get("content")
        if isinstance(content, list) and content:
            entry = content[0] if content[0] is not None else {}
            if not isinstance(entry, dict):
                raise _shape_error()
            text = entry.get("text")
        elif isinstance(content, str):
            text = content
    if text is None:
        raise GatewayError("backend response has no choice/content text")
    if not isinstance(text, str):
        raise _shape_error()

    usage = payload.get("usage") or {}
    if not isinstance(usage, dict):
        raise _shape_error()
    prompt = usage.get("prompt_tokens", usage.get("input_tokens"))
    completion = usage.get("completion_tokens", usage.get("output_tokens"))
    reported = prompt is not None and completion is not None
    return text, _token_count(prompt), _token_count(completion), reported


def _log_retry(state: RetryCallState) -> None:
    exc = state.outcome.exception() if state.outcome is not None else None
    logger.warning("Backend attempt %d failed (%s); retrying", state.attempt_number, type(exc).__name__)


class Gateway:
    """Chat-completion entry point shared by all agents.

    Enforces the in-flight call bound and retries transient transport
    failures with exponential backoff.
    """

    def __init__(
        self,
        config: BackendConfig,
        max_concurrency: int = 4,
        backend: ChatBackend | None = None,
        session: Any | None = None,
    ) -> None:
        if max_concurrency < 1:
            raise ConfigError("max_concurrency must be >= 1")
        self.config = config
        if backend is not None:
            self.backend: ChatBackend = backend
        elif config.kind == "mock":
            self.backend = MockBackend()
        else:
            self.backend = HttpBackend(config, session=session)
        self.max_concurrency = max_concurrency
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.peak_in_flight = 0
        self.calls = 0

    def request(self, system_prompt: str, user_message: str, **kwargs: Any) -> ChatRequest:
        """ChatRequest carrying this gateway's temperature/retry/timeout defaults."""
        return ChatRequest(
            system_prompt=system_prompt,
            user_message=user_message,
            temperature=self.config.temperature,
            max_retries=self.config.max_retries,
            timeout_seconds=self.config.timeout_seconds,
            **kwargs,
        )

    def _send(self, request: ChatRequest) -> BackendReply:
        with self._slots:
            with self._lock:
                self.in_flight += 1
                self.calls += 1
                self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            try:
                return self.backend.send(request)
            finally:
                with self._lock:
                    self.in_flight -= 1

    def complete(self, request: ChatRequest) -> ChatResponse:
        attempts = 0
        retrying = Retrying(
            stop=stop_after_attempt(request.max_retries + 1),
            wait=wait_exponential(multiplier=self.config.backoff_base_seconds, max=30),
            retry=retry_if_exception_type(TransientBackendError),
            before_sleep=_log_retry,
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    attempts = attempt.retry_state.attempt_number
                    reply = self._send(request)
        except TransientBackendError as exc:
            cls = BackendTimeoutError if exc.timeout else BackendExhaustedError
            raise cls(f"backend failed after {attempts} attempt(s): {exc}", attempts=attempts) from exc

        if not reply.usage_reported:
            logger.warning("Backend omitted token usage; recording 0 tokens")
        logger.debug(
            "Completed %s call in %d attempt(s): %d prompt / %d completion tokens",
            request.role or "chat",
            attempts,
            reply.prompt_tokens,
            reply.completion_tokens,
        )
        return ChatResponse(
            text=reply.text,
            prompt_tokens=reply.prompt_tokens,
            completion_tokens=reply.completion_tokens,
            attempts=attempts,
            usage_reported=reply.usage_reported,
        )


def complete(config: BackendConfig, request: ChatRequest) -> ChatResponse:
    return Gateway(config).complete(request)


def extract_json(text: str) -> dict[str, Any]:
    """First JSON object in text; accepts bare objects, fenced blocks, and surrounding prose."""
    stripped = text.strip()
    try:
        whole = json.loads(stripped)
    except json.JSONDecodeError:
        pass
    else:
        if not isinstance(whole, dict):
            raise ParseError(f"expected a JSON object, got {type(whole).__name__}")
        return whole

    for block in _FENCE_RE.findall(text):
        try:
            obj = json.loads(block.strip())
        except json.JSONDecodeError:
            continue
        if not isinstance(obj, dict):
            raise ParseError(f"expected a JSON object, got {type(obj).__name__}")
        return obj

    decoder = json.JSONDecoder()
    for match in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, match.start())
        except json.JSONDecodeError:
            continue
        return obj
    raise ParseError("no JSON object found in reply")


def request_json(
    gateway: Gateway,
    request: ChatRequest,
    parse: Callable[[dict[str, Any]], T],
    stage: str,
    neighbor_id: str | None = None,
    parse_retries: int = 1,
) -> tuple[T | None, tuple[CallUsage, ...], str | None]:
    """Call the backend and parse its JSON reply, re-asking on unparsable replies.

    Returns (value, usage, error); error is "parse-failure: ..." or
    "backend-failure: ..." when value is None.
    """
    usage: list[CallUsage] = []
    error: str | None = None
    for _ in range(parse_retries + 1):
        try:
            resp = gateway.complete(request)
        except GatewayError as exc:
            attempts = getattr(exc, "attempts", 1)
            usage.append(CallUsage(stage, neighbor_id, 0, 0, attempts, usage_reported=False))
            logger.warning("%s call for %s failed: %s", stage, neighbor_id or "target", exc)
            return None, tuple(usage), f"backend-failure: {exc}"
        usage.append(
            CallUsage(stage, neighbor_id, resp.prompt_tokens, resp.completion_tokens, resp.attempts, resp.usage_reported)
        )
        try:
            return parse(extract_json(resp.text)), tuple(usage), None
        except ParseError as exc:
            error = f"parse-failure: {exc}"
            logger.warning("Unparsable %s reply for %s: %s", stage, neighbor_id or "target", exc)
    return None, tuple(usage), error


def jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def _as_number(value: str) -> float | None:
    m = _NUMBER_RE.match(value)
    return float(m.group(1)) if m else None


def _compare_values(target_value: str, neighbor_value: str) -> str:
    t = _as_number(target_value)
    n = _as_number(neighbor_value)
    if t is not None and n is not None:
        if n > t:
            return "better"
        if n < t:
            return "worse"
        return "same"
    if target_value.strip().lower() == neighbor_value.strip().lower():
        return "same"
    return "mixed"


def _mock_relevance(payload: dict[str, Any]) -> dict[str, Any]:
    target, neighbor = payload["target"], payload["neighbor"]
    same_category = target["category"] == neighbor["category"]
    overlap = jaccard(set(title_tokens(target["title"])), set(title_tokens(neighbor["title"])))
    relevant = same_category and overlap >= MOCK_RELEVANCE_MIN_JACCARD
    if relevant:
        explanation = (
            f"Same category ({target['category']}) and title overlap {overlap:.2f}; "
            "customers would compare these prices directly."
        )
    elif not same_category:
        explanation = f"Different categories ({target['category']} vs {neighbor['category']}); not a price comparison."
    else:
        explanation = f"Title overlap {overlap:.2f} is too low for a direct substitute."
    return {"explanation": explanation, "relevance": "Relevant" if relevant else "Irrelevant"}


def _mock_utility(payload: dict[str, Any]) -> dict[str, Any]:
    target_attrs: dict[str, str] = payload["target"]["attributes"]
    neighbor_attrs = {str(k).lower(): str(v) for k, v in payload["neighbor"]["attributes"].items()}
    mode: dict[str, Any] = payload.get("mode") or {}

    shared = [(name, str(value)) for name, value in target_attrs.items() if name.lower() in neighbor_attrs]
    if mode.get("mode") == "static":
        allowed = {a.lower() for a in mode.get("attributes", [])}
        shared = [(name, value) for name, value in shared if name.lower() in allowed]

    def weight_of(name: str) -> int:
        return 3 if name.lower() in MOCK_HEAVY_ATTRIBUTES else 2

    if mode.get("mode") in ("dynamic", "weighted_dynamic"):
        top_n = int(mode.get("top_n", 5))
        keep = {name for name, _ in sorted(shared, key=lambda nv: (-weight_of(nv[0]), nv[0].lower()))[:top_n]}
        shared = [(name, value) for name, value in shared if name in keep]

    comparisons = []
    for name, value in shared:
        other = neighbor_attrs[name.lower()]
        comparisons.append(
            {
                "attribute": name,
                "verdict": _compare_values(value, other),
                "weight": weight_of(name),
                "analysis": f"target {value} vs neighbor {other}",
            }
        )
    return {"comparisons": comparisons}


def _mock_decision(payload: dict[str, Any]) -> dict[str, Any]:
    # Imported here: decision_engine depends on this module for llm_decide.
    from .decision_engine import decide
    from .types import QuadrantPoint

    points = [QuadrantPoint(**p) for p in payload["points"]]
    decision = decide(points, payload["strategy"])
    return {"explanation": decision.explanation, "decision": decision.verdict}


def mock_oracle(role: str, payload: dict[str, Any]) -> dict[str, Any]:
    """Deterministic rule answers standing in for the LLM in offline runs and tests."""
    handlers: dict[str, Callable[[dict[str, Any]], dict[str, Any]]] = {
        "relevance": _mock_relevance,
        "utility": _mock_utility,
        "padding": lambda _: {"explanation": "Fixed offline padding.", "price_padding": MOCK_PADDING},
        "decision": _mock_decision,
        "attributes": lambda _: {"attributes": list(MOCK_TABLE_ATTRIBUTES)},
    }
    if role not in handlers:
        raise ValueError(f"unknown mock role: {role}")
    try:
        return handlers[role](payload)
    except (KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"{role} payload does not match its schema: {exc!r}") from exc
