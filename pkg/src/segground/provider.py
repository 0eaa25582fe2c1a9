"""Completion providers: the HTTP client used in production and an offline
stub that replays canned responses keyed by prompt hash.

Wire contract: POST ``{"prompt", "max_tokens", "temperature"}`` to the
configured endpoint, which answers ``{"text": "..."}``.  The API key, when
set, travels as a bearer token and is read from ``PROVIDER_API_KEY`` unless
given explicitly.
"""

from __future__ import annotations

import hashlib
import os
import time
from pathlib import Path

import requests

from .errors import ProviderError

API_KEY_ENV = "PROVIDER_API_KEY"


class CompletionProvider:
    """Interface: turn a prompt into raw completion text."""

    def complete(
        self, prompt: str, max_tokens: int = 512, temperature: float = 0.2
    ) -> str:
        raise NotImplementedError


class HttpCompletionProvider(CompletionProvider):
    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
    ):
        self.url = url
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def complete(
        self, prompt: str, max_tokens: int = 512, temperature: float = 0.2
    ) -> str:
        payload = {
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": temperature,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = requests.post(
                    self.url, json=payload, headers=headers, timeout=self.timeout
                )
                response.raise_for_status()
                body = response.json()
                text = body.get("text")
                if not isinstance(text, str):
                    raise ValueError(f"response lacks a 'text' string: {body!r}")
                return text
            except Exception as exc:  # noqa: BLE001 - every failure is retryable
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (2**attempt))
        raise ProviderError(
            f"{self.url} failed after {self.retries + 1} attempts: {last_error}"
        ) from last_error


def prompt_key(prompt: str) -> str:
    """Filename stem for a stub fixture: first 16 hex chars of sha256."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


def write_stub_response(fixture_dir, prompt: str, text: str) -> Path:
    """Record the canned completion for ``prompt`` in a stub fixture dir."""
    directory = Path(fixture_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{prompt_key(prompt)}.txt"
    path.write_text(text, encoding="utf-8")
    return path


class StubCompletionProvider(CompletionProvider):
    """Replays fixture files written by :func:`write_stub_response`."""

    def __init__(self, fixture_dir):
        self.fixture_dir = Path(fixture_dir)

    def complete(
        self, prompt: str, max_tokens: int = 512, temperature: float = 0.2
    ) -> str:
        path = self.fixture_dir / f"{prompt_key(prompt)}.txt"
        if not path.is_file():
            raise ProviderError(f"no stub fixture {path.name} in {self.fixture_dir}")
        return path.read_text(encoding="utf-8")
