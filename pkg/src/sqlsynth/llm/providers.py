"""Chat/embedding request types and the HTTP provider."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx

from .prompts import PromptBundle


class ProviderError(RuntimeError):
    pass


class TransientProviderError(ProviderError):
    """Rate limits, 5xx responses, timeouts: worth retrying."""


class ProviderAuthError(ProviderError):
    pass


class TruncatedResponseError(ProviderError):
    pass


class RetriesExhaustedError(ProviderError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    prompt: PromptBundle
    temperature: float = 0.7
    max_tokens: int = 256
    sample_index: int = 0


@dataclass(frozen=True)
class ChatResponse:
    text: str
    provider: str
    model: str
    cached: bool = False
    finish_reason: str = "stop"


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model: str

    @property
    def dimension(self) -> int:
        return len(self.values)


class Provider(Protocol):
    name: str
    chat_model: str
    embed_model: str
    dimension: int

    def complete(self, request: ChatRequest) -> tuple[str, str]:
        """Return (text, finish_reason)."""

    def embed(self, text: str) -> Sequence[float]: ...


class OpenAICompatibleProvider:
    """Client for the common ``/chat/completions`` + ``/embeddings`` JSON API.

    The API key is read from the environment on every call and never stored.
    """

    name = "openai"

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        chat_model: str = "gpt-3.5-turbo",
        embed_model: str = "text-embedding-ada-002",
        *,
        dimension: int = 1536,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.chat_model = chat_model
        self.embed_model = embed_model
        self.dimension = dimension
        self.api_key_env = api_key_env
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ProviderAuthError(f"environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = self._http.post(f"{self.base_url}{path}", json=payload, headers=self._headers())
        except httpx.TimeoutException as exc:
            raise TransientProviderError(f"timeout calling {path}") from exc
        except httpx.TransportError as exc:
            raise TransientProviderError(f"transport error calling {path}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise ProviderAuthError(f"{path}: HTTP {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(f"{path}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"{path}: HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def complete(self, request: ChatRequest) -> tuple[str, str]:
        body = self._post(
            "/chat/completions",
            {
                "model": self.chat_model,
                "messages": [{"role": "user", "content": request.prompt.text}],
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            },
        )
        try:
            choice = body["choices"][0]
            return choice["message"]["content"] or "", choice.get("finish_reason") or "stop"
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {str(body)[:200]}") from exc

    def embed(self, text: str) -> list[float]:
        body = self._post("/embeddings", {"model": self.embed_model, "input": text})
        try:
            return list(body["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {str(body)[:200]}") from exc

    def close(self) -> None:
        self._http.close()
