"""Cached, retrying, concurrency-bounded access to a provider."""

from __future__ import annotations

import logging
import math
import threading
import time
from typing import Callable

from .cache import ResponseCache, cache_key
from .prompts import PLACEHOLDER, PromptError
from .providers import (
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    Provider,
    ProviderError,
    RetriesExhaustedError,
    TransientProviderError,
    TruncatedResponseError,
)

log = logging.getLogger(__name__)


class RateLimiter:
    """Enforces a minimum spacing between request starts."""

    def __init__(self, per_second: float | None, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / per_second if per_second else 0.0
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            self._sleep(start - now)


class LLMClient:
    def __init__(
        self,
        provider: Provider,
        cache: ResponseCache | None = None,
        *,
        max_retries: int = 4,
        backoff: float = 1.0,
        max_in_flight: int = 4,
        requests_per_second: float | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider = provider
        self.cache = cache
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._limiter = RateLimiter(requests_per_second, sleep=sleep)
        self.calls = 0  # provider dispatches, cache hits excluded
        self._calls_lock = threading.Lock()

    def _dispatch(self, fn: Callable[[], object], what: str):
        for attempt in range(self.max_retries + 1):
            try:
                with self._slots:
                    self._limiter.wait()
                    with self._calls_lock:
                        self.calls += 1
                    return fn()
            except TransientProviderError as exc:
                if attempt == self.max_retries:
                    raise RetriesExhaustedError(
                        f"{what}: giving up after {attempt + 1} attempts: {exc}"
                    ) from exc
                delay = self.backoff * 2**attempt
                log.warning("%s: %s; retrying in %.1fs", what, exc, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")

    def chat_key(self, request: ChatRequest) -> dict:
        bundle = request.prompt
        return {
            "kind": "chat",
            "provider": self.provider.name,
            "model": self.provider.chat_model,
            "template_id": bundle.template_id,
            "template_digest": bundle.template_digest,
            "bindings": dict(bundle.bindings),
            "prompt": bundle.text,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "sample_index": request.sample_index,
        }

    def chat(self, request: ChatRequest) -> ChatResponse:
        text = request.prompt.text
        if not text.strip():
            raise PromptError("refusing to send an empty prompt")
        unbound = PLACEHOLDER.findall(text)
        if unbound:
            raise PromptError(f"unbound placeholder(s) in outgoing prompt: {', '.join(unbound)}")
        key_fields = self.chat_key(request)
        digest = cache_key(key_fields)
        if self.cache is not None:
            hit = self.cache.get(digest)
            if hit is not None:
                return ChatResponse(hit["text"], hit["provider"], hit["model"], True, hit["finish_reason"])

        out, finish = self._dispatch(lambda: self.provider.complete(request), request.prompt.template_id)
        if finish == "length":
            raise TruncatedResponseError(
                f"{request.prompt.template_id}: response cut at max_tokens={request.max_tokens}"
            )
        response = ChatResponse(out, self.provider.name, self.provider.chat_model, False, finish)
        if self.cache is not None and out.strip():
            self.cache.put(
                digest,
                key_fields,
                {"text": out, "provider": response.provider, "model": response.model, "finish_reason": finish},
            )
        return response

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        model = self.provider.embed_model
        key_fields = {"kind": "embed", "provider": self.provider.name, "model": model, "text": text}
        digest = cache_key(key_fields)
        if self.cache is not None:
            hit = self.cache.get(digest)
            if hit is not None:
                return EmbeddingVector(tuple(hit["values"]), model)
        values = tuple(float(v) for v in self._dispatch(lambda: self.provider.embed(text), "embed"))
        if len(values) != self.provider.dimension:
            raise ProviderError(
                f"embedding has dimension {len(values)}, provider declares {self.provider.dimension}"
            )
        if not all(math.isfinite(v) for v in values):
            raise ProviderError("embedding contains non-finite values")
        if self.cache is not None:
            self.cache.put(digest, key_fields, {"values": list(values)})
        return EmbeddingVector(values, model)
