import json
import threading
import time

import httpx
import pytest

from sqlsynth.llm import (
    TEMPLATE_IDS,
    ChatRequest,
    LLMClient,
    OpenAICompatibleProvider,
    PromptBundle,
    PromptError,
    ProviderAuthError,
    ProviderError,
    ResponseCache,
    RetriesExhaustedError,
    StubProvider,
    TransientProviderError,
    TruncatedResponseError,
    cache_key,
    load_template,
    render_prompt,
)
from sqlsynth.llm.stub import explain_sql, fill_question


class ScriptedProvider:
    name = "scripted"
    chat_model = "m1"
    embed_model = "e1"
    dimension = 3

    def __init__(self, script=None, vector=(1.0, 0.0, 0.0)):
        self.script = list(script or [])
        self.vector = vector
        self.seen = []

    def complete(self, request):
        self.seen.append(request)
        step = self.script.pop(0) if self.script else ("ok", "stop")
        if isinstance(step, Exception):
            raise step
        return step

    def embed(self, text):
        self.seen.append(text)
        return list(self.vector)


def _bundle(**kw):
    return render_prompt("explain_for_validate", {"query": kw.get("query", "SELECT 1")})


def test_catalog_templates_load_with_versions():
    for template_id in TEMPLATE_IDS:
        template = load_template(template_id)
        assert template.version == "1"
        assert template.placeholders
        assert "version:" not in template.text
    with pytest.raises(PromptError):
        load_template("nope")


def test_render_prompt_binds_once():
    bundle = render_prompt("fill_template", {"question_template": "How many {MASK}?", "explanation": "x"})
    assert "How many {MASK}?" in bundle.text
    assert bundle.bindings["explanation"] == "x"
    with pytest.raises(PromptError, match="explanation"):
        render_prompt("fill_template", {"question_template": "t"})


def test_chat_is_cached(tmp_path):
    provider = ScriptedProvider([("first", "stop"), ("second", "stop")])
    client = LLMClient(provider, ResponseCache(tmp_path))
    a = client.chat(ChatRequest(_bundle()))
    b = client.chat(ChatRequest(_bundle()))
    assert (a.text, a.cached, b.text, b.cached) == ("first", False, "first", True)
    assert client.calls == 1
    fresh = LLMClient(ScriptedProvider([("other", "stop")]), ResponseCache(tmp_path))
    assert fresh.chat(ChatRequest(_bundle())).text == "first"
    assert fresh.calls == 0


def test_cache_key_covers_every_field():
    client = LLMClient(ScriptedProvider())
    base = ChatRequest(_bundle())
    variants = [
        ChatRequest(_bundle(query="SELECT 2")),
        ChatRequest(_bundle(), temperature=0.1),
        ChatRequest(_bundle(), max_tokens=10),
        ChatRequest(_bundle(), sample_index=3),
        ChatRequest(render_prompt("describe_query", {"query": "SELECT 1"})),
    ]
    keys = {cache_key(client.chat_key(r)) for r in [base, *variants]}
    assert len(keys) == 6
    other_model = ScriptedProvider()
    other_model.chat_model = "m2"
    assert cache_key(LLMClient(other_model).chat_key(base)) != cache_key(client.chat_key(base))
    bumped = PromptBundle(base.prompt.template_id, "2", "f" * 64, base.prompt.bindings, base.prompt.text)
    assert cache_key(client.chat_key(ChatRequest(bumped))) != cache_key(client.chat_key(base))


def test_retry_with_exponential_backoff():
    sleeps = []
    provider = ScriptedProvider([TransientProviderError("429"), TransientProviderError("503"), ("done", "stop")])
    client = LLMClient(provider, max_retries=4, backoff=0.5, sleep=sleeps.append)
    assert client.chat(ChatRequest(_bundle())).text == "done"
    assert sleeps == [0.5, 1.0]


def test_retries_exhausted_and_auth_not_retried():
    sleeps = []
    client = LLMClient(ScriptedProvider([TransientProviderError("x")] * 3), max_retries=2, sleep=sleeps.append)
    with pytest.raises(RetriesExhaustedError):
        client.chat(ChatRequest(_bundle()))
    assert len(sleeps) == 2
    auth = LLMClient(ScriptedProvider([ProviderAuthError("401")]), sleep=sleeps.append)
    with pytest.raises(ProviderAuthError):
        auth.chat(ChatRequest(_bundle()))
    assert auth.calls == 1


def test_truncated_and_empty_replies_are_not_cached(tmp_path):
    cache = ResponseCache(tmp_path)
    client = LLMClient(ScriptedProvider([("partial", "length"), ("", "stop")]), cache)
    with pytest.raises(TruncatedResponseError):
        client.chat(ChatRequest(_bundle()))
    assert client.chat(ChatRequest(_bundle())).text == ""
    assert len(cache) == 0


def test_unbound_placeholder_and_empty_prompt_rejected():
    client = LLMClient(ScriptedProvider())
    leaky = PromptBundle("explain_for_validate", "1", "d", {}, "Explain {query}")
    with pytest.raises(PromptError, match="query"):
        client.chat(ChatRequest(leaky))
    with pytest.raises(PromptError):
        client.chat(ChatRequest(PromptBundle("explain_for_validate", "1", "d", {}, "  ")))


def test_embedding_checks_and_cache(tmp_path):
    client = LLMClient(ScriptedProvider(), ResponseCache(tmp_path))
    assert client.embed("hello").values == (1.0, 0.0, 0.0)
    client.embed("hello")
    assert client.calls == 1
    with pytest.raises(ProviderError, match="dimension"):
        LLMClient(ScriptedProvider(vector=(1.0, 2.0))).embed("x")
    with pytest.raises(ProviderError, match="non-finite"):
        LLMClient(ScriptedProvider(vector=(1.0, float("nan"), 0.0))).embed("x")
    with pytest.raises(ValueError):
        client.embed("  ")


def test_in_flight_bound():
    active, peak, lock = [0], [0], threading.Lock()

    class Slow(ScriptedProvider):
        def complete(self, request):
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.02)
            with lock:
                active[0] -= 1
            return "ok", "stop"

    client = LLMClient(Slow(), max_in_flight=2)
    threads = [
        threading.Thread(target=client.chat, args=(ChatRequest(_bundle(query=f"SELECT {i}")),)) for i in range(8)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2
    assert client.calls == 8


# --- HTTP provider against a mock transport ---------------------------------

def _openai(handler, monkeypatch, key="sk-test-secret"):
    if key is None:
        monkeypatch.delenv("TEST_API_KEY", raising=False)
    else:
        monkeypatch.setenv("TEST_API_KEY", key)
    return OpenAICompatibleProvider(
        "https://llm.invalid/v1", dimension=3, api_key_env="TEST_API_KEY", transport=httpx.MockTransport(handler)
    )


def _chat_body(text, finish="stop"):
    return {"choices": [{"message": {"content": text}, "finish_reason": finish}]}


def test_http_chat_and_embed(monkeypatch, tmp_path):
    seen = []

    def handler(request):
        seen.append(request)
        if request.url.path.endswith("/embeddings"):
            return httpx.Response(200, json={"data": [{"embedding": [0.1, 0.2, 0.3]}]})
        return httpx.Response(200, json=_chat_body("return the pets"))

    client = LLMClient(_openai(handler, monkeypatch), ResponseCache(tmp_path))
    assert client.chat(ChatRequest(_bundle())).text == "return the pets"
    assert client.embed("hi").values == (0.1, 0.2, 0.3)
    assert seen[0].headers["authorization"] == "Bearer sk-test-secret"
    payload = json.loads(seen[0].content)
    assert payload["messages"][0]["content"] == _bundle().text
    for path in tmp_path.iterdir():
        assert "sk-test-secret" not in path.read_text()


def test_http_retry_on_rate_limit(monkeypatch):
    responses = [httpx.Response(429), httpx.Response(502), httpx.Response(200, json=_chat_body("ok"))]
    sleeps = []
    client = LLMClient(_openai(lambda r: responses.pop(0), monkeypatch), sleep=sleeps.append)
    assert client.chat(ChatRequest(_bundle())).text == "ok"
    assert sleeps == [1.0, 2.0]


def test_http_auth_failures(monkeypatch):
    client = LLMClient(_openai(lambda r: httpx.Response(401), monkeypatch), sleep=lambda s: None)
    with pytest.raises(ProviderAuthError):
        client.chat(ChatRequest(_bundle()))
    missing = LLMClient(_openai(lambda r: httpx.Response(200, json=_chat_body("x")), monkeypatch, key=None))
    with pytest.raises(ProviderAuthError, match="TEST_API_KEY"):
        missing.chat(ChatRequest(_bundle()))


def test_http_truncation_and_malformed(monkeypatch):
    client = LLMClient(_openai(lambda r: httpx.Response(200, json=_chat_body("cut", "length")), monkeypatch))
    with pytest.raises(TruncatedResponseError):
        client.chat(ChatRequest(_bundle()))
    bad = LLMClient(_openai(lambda r: httpx.Response(200, json={"nope": 1}), monkeypatch))
    with pytest.raises(ProviderError, match="malformed"):
        bad.chat(ChatRequest(_bundle()))
    client_error = LLMClient(_openai(lambda r: httpx.Response(400, text="bad request"), monkeypatch))
    with pytest.raises(ProviderError, match="400"):
        client_error.chat(ChatRequest(_bundle()))


def test_http_timeout_is_transient(monkeypatch):
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    client = LLMClient(_openai(handler, monkeypatch), max_retries=1, sleep=lambda s: None)
    with pytest.raises(RetriesExhaustedError):
        client.chat(ChatRequest(_bundle()))


# --- stub --------------------------------------------------------------------

def test_stub_is_deterministic_and_normalized():
    stub = StubProvider()
    vec = stub.embed("List all pets")
    assert len(vec) == stub.dimension == 256
    assert abs(sum(v * v for v in vec) - 1.0) < 1e-12
    assert stub.embed("list   ALL pets") == vec
    request = ChatRequest(render_prompt("explain_for_fill", {"query": "SELECT count(*) FROM pets", "shot": ""}))
    assert stub.complete(request) == stub.complete(request)


def test_stub_rules():
    assert explain_sql("SELECT count(*) FROM pets") == "return the number of rows of the pets table"
    assert fill_question("How many MASK ?", "return the pets") == "How many return the pets ?"
    assert fill_question("MASK and MASK", "a b c") == "a b and c"
    assert fill_question("What MASK", "what") == "What MASK"
    stub = StubProvider(overrides={"describe_query": lambda b: "custom"})
    request = ChatRequest(render_prompt("describe_query", {"query": "SELECT 1"}))
    assert stub.complete(request) == ("custom", "stop")
