"""Provider-neutral chat and embedding access with prompt rendering and caching."""

from .cache import ResponseCache, cache_key
from .client import LLMClient, RateLimiter
from .prompts import TEMPLATE_IDS, PromptBundle, PromptError, load_template, render_prompt
from .providers import (
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    OpenAICompatibleProvider,
    Provider,
    ProviderAuthError,
    ProviderError,
    RetriesExhaustedError,
    TransientProviderError,
    TruncatedResponseError,
)
from .stub import StubProvider, trigram_embedding

__all__ = [
    "TEMPLATE_IDS",
    "ChatRequest",
    "ChatResponse",
    "EmbeddingVector",
    "LLMClient",
    "OpenAICompatibleProvider",
    "PromptBundle",
    "PromptError",
    "Provider",
    "ProviderAuthError",
    "ProviderError",
    "RateLimiter",
    "ResponseCache",
    "RetriesExhaustedError",
    "StubProvider",
    "TransientProviderError",
    "TruncatedResponseError",
    "cache_key",
    "load_template",
    "render_prompt",
    "trigram_embedding",
]
