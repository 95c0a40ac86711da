import json

import httpx
import pytest

from trafficlab.llm import (
    API_KEY_ENV,
    ChatRequest,
    ChatResponse,
    HttpChatBackend,
    HttpStatusError,
    ProtocolError,
    ReplayBackend,
    ReplayExhaustedError,
    RetriesExhaustedError,
    RetryPolicy,
    TransportError,
    make_backend,
    with_retry,
)

REQ = ChatRequest("gpt-4-turbo", [("system", "be brief"), ("user", "first"), ("assistant", "ok"), ("user", "second")])


def _ok(content="hello"):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}],
                                     "usage": {"prompt_tokens": 3, "completion_tokens": 1}})


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", [])
    with pytest.raises(ValueError):
        ChatRequest("m", [("robot", "hi")])


def test_replay_order_and_exhaustion():
    backend = ReplayBackend(["a", "b"])
    assert backend.chat(REQ).content == "a"
    assert backend.chat(ChatRequest("other", [("user", "x")])).content == "b"
    assert backend.remaining == 0
    with pytest.raises(ReplayExhaustedError):
        backend.chat(REQ)


def test_replay_is_pure():
    def run():
        b = ReplayBackend(["x", "y", "z"])
        return [b.chat(REQ).content for _ in range(3)]

    assert run() == run() == ["x", "y", "z"]


def test_replay_from_jsonl(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"response": "one"}\n\n{"response": "two"}\n')
    assert ReplayBackend.from_jsonl(path).responses == ["one", "two"]
    path.write_text('{"response": "one"}\n{"text": "bad"}\n')
    with pytest.raises(ProtocolError, match="line 2"):
        ReplayBackend.from_jsonl(path)


def test_live_body_and_headers(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "sekret")
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        seen["url"] = str(request.url)
        return _ok()

    backend = HttpChatBackend("https://llm.test/v1/chat/completions", transport=httpx.MockTransport(handler))
    before = REQ.body()
    resp = backend.chat(REQ)
    assert isinstance(resp, ChatResponse) and resp.content == "hello"
    assert resp.usage == {"prompt_tokens": 3, "completion_tokens": 1}
    assert seen["body"]["model"] == "gpt-4-turbo"
    assert [(m["role"], m["content"]) for m in seen["body"]["messages"]] == list(REQ.messages)
    assert seen["body"]["temperature"] == 0.7 and seen["body"]["max_tokens"] == 2048
    assert seen["auth"] == "Bearer sekret"
    assert seen["url"] == "https://llm.test/v1/chat/completions"
    assert REQ.body() == before


@pytest.mark.parametrize("payload", [{"choices": []}, {"nope": 1}, {"choices": [{"message": {"content": 5}}]}])
def test_live_malformed(payload):
    backend = HttpChatBackend("https://x", transport=httpx.MockTransport(lambda r: httpx.Response(200, json=payload)))
    with pytest.raises(ProtocolError):
        backend.chat(REQ)


def test_live_non_json():
    backend = HttpChatBackend("https://x", transport=httpx.MockTransport(lambda r: httpx.Response(200, text="<html>")))
    with pytest.raises(ProtocolError):
        backend.chat(REQ)


def test_transport_error_wrapped():
    def handler(request):
        raise httpx.ConnectError("refused")

    backend = HttpChatBackend("https://x", transport=httpx.MockTransport(handler))
    with pytest.raises(TransportError):
        backend.chat(REQ)


class _Scripted:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = 0

    def chat(self, request):
        self.calls += 1
        out = self.outcomes.pop(0)
        if isinstance(out, Exception):
            raise out
        return ChatResponse(out)


def test_retry_then_success():
    sleeps = []
    b = _Scripted([TransportError("x"), HttpStatusError(503), "done"])
    assert with_retry(b, REQ, RetryPolicy(), sleep=sleeps.append).content == "done"
    assert b.calls == 3 and sleeps == [1.0, 2.0]


def test_retry_429():
    b = _Scripted([HttpStatusError(429), "ok"])
    assert with_retry(b, REQ, sleep=lambda s: None).content == "ok"


def test_no_retry_on_401():
    b = _Scripted([HttpStatusError(401, "denied"), "never"])
    with pytest.raises(HttpStatusError) as info:
        with_retry(b, REQ, sleep=lambda s: None)
    assert info.value.status == 401 and b.calls == 1


def test_exhausted_503_over_http():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503, text="busy")

    backend = HttpChatBackend("https://x", api_key="", transport=httpx.MockTransport(handler))
    with pytest.raises(RetriesExhaustedError) as info:
        with_retry(backend, REQ, sleep=lambda s: None)
    assert info.value.attempts == 3 and len(calls) == 3
    assert isinstance(info.value.last, HttpStatusError) and info.value.last.status == 503


def test_replay_exhaustion_is_not_retried():
    b = ReplayBackend([])
    with pytest.raises(ReplayExhaustedError):
        with_retry(b, REQ, sleep=lambda s: pytest.fail("slept"))


def test_policy_validation_and_delays():
    assert [RetryPolicy().delay(i) for i in (1, 2, 3)] == [1.0, 2.0, 4.0]
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=0)


def test_make_backend(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"response": "a"}\n')
    assert isinstance(make_backend(f"replay:{path}"), ReplayBackend)
    assert isinstance(make_backend("live", "https://x"), HttpChatBackend)
    with pytest.raises(ValueError):
        make_backend("live")
    with pytest.raises(ValueError):
        make_backend("magic")
