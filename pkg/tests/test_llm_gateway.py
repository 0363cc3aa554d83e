import json

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from price_audit.config import BackendConfig
from price_audit.errors import BackendExhaustedError, BackendTimeoutError, ConfigError, GatewayError, ParseError
from price_audit.llm_gateway import (
    Gateway,
    HttpBackend,
    TransientBackendError,
    extract_json,
    mock_oracle,
    request_json,
)
from price_audit.pipeline import fan_out
from price_audit.types import ChatRequest

from conftest import ScriptedBackend, SlowMockBackend


class FakeResponse:
    def __init__(self, status_code: int, payload: dict | None = None) -> None:
        self.status_code = status_code
        self.payload = payload
        self.text = json.dumps(payload) if payload is not None else "not json"

    def json(self) -> dict:
        if self.payload is None:
            raise ValueError("no body")
        return self.payload


class FakeSession:
    def __init__(self, responses: list) -> None:
        self.responses = list(responses)
        self.calls: list[dict] = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


HTTP_CONFIG = BackendConfig(
    kind="http",
    endpoint="https://llm.example/v1/chat/completions",
    credential_env_var="TEST_LLM_KEY",
    max_retries=2,
    backoff_base_seconds=0.0,
)


def _ok(text: str, usage: dict | None = None) -> FakeResponse:
    payload = {"choices": [{"message": {"content": text}}]}
    if usage is not None:
        payload["usage"] = usage
    return FakeResponse(200, payload)


def _http_gateway(responses: list) -> tuple[Gateway, FakeSession]:
    session = FakeSession(responses)
    backend = HttpBackend(HTTP_CONFIG, session=session, environ={"TEST_LLM_KEY": "sk-test"})
    return Gateway(HTTP_CONFIG, backend=backend), session


def _req(gateway: Gateway) -> ChatRequest:
    return gateway.request("system prompt", "user message")


def test_extract_json_variants() -> None:
    assert extract_json('{"a": 1}') == {"a": 1}
    assert extract_json('Sure:\n```json\n{"a": 2}\n```\n') == {"a": 2}
    assert extract_json('The answer is {"a": {"b": 3}} as requested.') == {"a": {"b": 3}}
    with pytest.raises(ParseError):
        extract_json("[1, 2, 3]")
    with pytest.raises(ParseError):
        extract_json("no json here")


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.text(alphabet="abcdefgh", min_size=1, max_size=6), st.integers(), max_size=5))
def test_extract_json_recovers_object_from_prose(obj: dict) -> None:
    assert extract_json(f"Here you go: {json.dumps(obj)} hope it helps") == obj


json_text = st.text(alphabet=st.characters(exclude_characters="`", exclude_categories=("Cs",)), max_size=8)
json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.floats(allow_nan=False, allow_infinity=False) | json_text,
    lambda children: st.lists(children, max_size=3) | st.dictionaries(json_text, children, max_size=3),
    max_leaves=10,
)
json_objects = st.dictionaries(json_text, json_values, max_size=4)


def _raw(obj: dict) -> str:
    return json.dumps(obj)


def _fenced(obj: dict) -> str:
    return f"Here is the result:\n```json\n{json.dumps(obj, indent=2)}\n```\nDone."


def _prose(obj: dict) -> str:
    return f"Answer: {json.dumps(obj)} (end of answer)"


@settings(max_examples=200, deadline=None)
@given(json_objects, st.sampled_from([_raw, _fenced, _prose]))
def test_extract_json_round_trips_any_rendering(obj: dict, render) -> None:
    assert extract_json(render(obj)) == obj


def test_http_backend_parses_reply_and_usage() -> None:
    gateway, session = _http_gateway([_ok('{"relevance": "Relevant"}', {"prompt_tokens": 12, "completion_tokens": 4})])
    resp = gateway.complete(_req(gateway))
    assert resp.text == '{"relevance": "Relevant"}'
    assert (resp.prompt_tokens, resp.completion_tokens, resp.attempts) == (12, 4, 1)
    call = session.calls[0]
    assert call["headers"]["Authorization"] == "Bearer sk-test"
    assert call["json"]["messages"][0] == {"role": "system", "content": "system prompt"}
    assert call["json"]["temperature"] == 0.0


@pytest.mark.parametrize(
    "body",
    [
        [{"oops": 1}],
        {"choices": ["plain text"]},
        {"content": [3]},
        {"choices": [{"message": {"content": {"nested": True}}}]},
        {"choices": [{"message": {"content": "{}"}}], "usage": ["tokens"]},
        {"choices": [{"message": {"content": "{}"}}], "usage": {"prompt_tokens": "many", "completion_tokens": 1}},
    ],
)
def test_unexpected_reply_shape_is_a_gateway_error(body) -> None:
    gateway, session = _http_gateway([FakeResponse(200, body)])
    with pytest.raises(GatewayError, match="unexpected shape"):
        gateway.complete(_req(gateway))
    assert len(session.calls) == 1


def test_bad_reply_shape_stays_inside_each_record() -> None:
    from price_audit.config import PipelineConfig
    from price_audit.pipeline import assess_batch
    from price_audit.synthetic import veto_mouse_fixture

    fx = veto_mouse_fixture()
    gateway, _ = _http_gateway([FakeResponse(200, [{"oops": 1}]) for _ in range(10)])
    config = PipelineConfig(backend=HTTP_CONFIG)
    records = assess_batch(fx.catalog, config, fx.catalog.ids, gateway)
    assert len(records) == 2
    for record in records:
        assert record.error is None
        assert record.verdict == "Unsure"
        assert record.decision.explanation == "no usable evidence"
        assert record.relevance[0].error.startswith("backend-failure")


def test_missing_usage_is_recorded_as_unreported() -> None:
    gateway, _ = _http_gateway([_ok("{}")])
    resp = gateway.complete(_req(gateway))
    assert resp.usage_reported is False
    assert resp.prompt_tokens == 0


def test_transient_http_errors_are_retried() -> None:
    gateway, session = _http_gateway([FakeResponse(429, {}), requests.ConnectionError("reset"), _ok("{}")])
    resp = gateway.complete(_req(gateway))
    assert resp.attempts == 3
    assert len(session.calls) == 3


def test_retries_exhausted_carry_attempts() -> None:
    gateway, _ = _http_gateway([FakeResponse(503, {})] * 3)
    with pytest.raises(BackendExhaustedError) as exc:
        gateway.complete(_req(gateway))
    assert exc.value.attempts == 3


def test_timeouts_raise_timeout_error() -> None:
    gateway, _ = _http_gateway([requests.Timeout("slow")] * 3)
    with pytest.raises(BackendTimeoutError):
        gateway.complete(_req(gateway))


def test_client_errors_are_not_retried() -> None:
    gateway, session = _http_gateway([FakeResponse(400, {"error": "bad"}), _ok("{}")])
    with pytest.raises(GatewayError, match="400"):
        gateway.complete(_req(gateway))
    assert len(session.calls) == 1


def test_http_backend_requires_credential() -> None:
    with pytest.raises(ConfigError, match="TEST_LLM_KEY"):
        HttpBackend(HTTP_CONFIG, session=FakeSession([]), environ={})


def test_http_config_requires_endpoint() -> None:
    with pytest.raises(ValueError):
        BackendConfig(kind="http", endpoint="")


def test_chat_request_validation() -> None:
    with pytest.raises(ValueError):
        ChatRequest("", "user")
    with pytest.raises(ValueError):
        ChatRequest("system", "user", temperature=-0.1)
    with pytest.raises(ValueError):
        ChatRequest("system", "user", timeout_seconds=0)


def test_scripted_transient_then_success(scripted_gateway) -> None:
    gateway = scripted_gateway([TransientBackendError("blip"), '{"ok": true}'])
    resp = gateway.complete(_req(gateway))
    assert resp.attempts == 2
    assert gateway.calls == 2


def test_request_json_reasks_after_unparsable_reply(scripted_gateway) -> None:
    gateway = scripted_gateway(["I think it is relevant", '{"value": 7}'])
    value, usage, error = request_json(gateway, _req(gateway), lambda obj: obj["value"], stage="relevance")
    assert value == 7
    assert error is None
    assert len(usage) == 2


def test_request_json_reports_failures(scripted_gateway) -> None:
    gateway = scripted_gateway(["nope", "still nope"])
    value, _, error = request_json(gateway, _req(gateway), lambda obj: obj, stage="utility", parse_retries=1)
    assert value is None
    assert error.startswith("parse-failure")

    gateway = scripted_gateway([GatewayError("HTTP 401")])
    value, usage, error = request_json(gateway, _req(gateway), lambda obj: obj, stage="utility")
    assert value is None
    assert error.startswith("backend-failure")
    assert usage[0].usage_reported is False


def test_mock_backend_is_deterministic(mock_gateway) -> None:
    payload = {
        "target": {"title": "Swift Wireless Mouse", "category": "mice", "attributes": {}},
        "neighbor": {"title": "Swift Wireless Mouse Basic", "category": "mice", "attributes": {}},
    }
    req = mock_gateway.request("system", "user", role="relevance", payload=payload)
    first = mock_gateway.complete(req)
    second = mock_gateway.complete(req)
    assert first == second
    assert json.loads(first.text)["relevance"] == "Relevant"


def test_mock_oracle_rejects_unknown_role_and_bad_payload() -> None:
    with pytest.raises(ValueError):
        mock_oracle("pricing", {})
    with pytest.raises(ParseError):
        mock_oracle("relevance", {"target": {}})


def test_mock_backend_needs_role(mock_gateway) -> None:
    with pytest.raises(GatewayError):
        mock_gateway.complete(mock_gateway.request("system", "user"))


def test_concurrency_bound_is_enforced() -> None:
    gateway = Gateway(BackendConfig(kind="mock"), max_concurrency=2, backend=SlowMockBackend(0.02))
    payload = {"category": "lamps"}
    reqs = [gateway.request("system", f"user {i}", role="attributes", payload=payload) for i in range(8)]
    results = fan_out(gateway.complete, reqs, n_jobs=8)
    assert len(results) == 8
    assert 1 <= gateway.peak_in_flight <= 2
    assert gateway.in_flight == 0


def test_scripted_backend_records_requests(scripted_gateway) -> None:
    gateway = scripted_gateway(['{"a": 1}'])
    gateway.complete(_req(gateway))
    assert isinstance(gateway.backend, ScriptedBackend)
    assert gateway.backend.requests[0].user_message == "user message"
