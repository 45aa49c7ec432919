"""Gateway backends: remote HTTP, scripted replay, and a recording wrapper."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from pathlib import Path
from typing import Callable, Optional

import requests

from ..model import SentinelError
from .gateway import BackendTimeout, CompletionRequest, FixtureMiss, RateLimited

logger = logging.getLogger(__name__)

LLM_KEY_ENV = "SENTINEL_LLM_KEY"


class RemoteBackend:
    """OpenAI-style chat-completion HTTP client with a concurrency cap."""

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_concurrency: int = 4,
        max_attempts: int = 3,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self._url = endpoint.rstrip("/") + "/chat/completions"
        self._model = model
        self._api_key = api_key or os.environ.get(LLM_KEY_ENV, "")
        self._timeout = timeout
        self._semaphore = threading.Semaphore(max_concurrency)
        self._max_attempts = max_attempts
        self._sleep = sleeper

    def complete(self, request: CompletionRequest) -> list[str]:
        payload = {
            "model": self._model,
            "messages": [{"role": m.role.value, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "n": request.sample_count,
            "max_tokens": request.max_output,
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        last_rate_limit: Optional[RateLimited] = None
        with self._semaphore:
            for attempt in range(self._max_attempts):
                try:
                    resp = requests.post(self._url, json=payload, headers=headers, timeout=self._timeout)
                except requests.Timeout as exc:
                    raise BackendTimeout(f"completion request timed out: {exc}") from exc
                except requests.RequestException as exc:
                    raise BackendTimeout(f"completion request failed: {exc}") from exc
                if resp.status_code == 429:
                    retry_after = float(resp.headers.get("Retry-After", "1"))
                    last_rate_limit = RateLimited("rate limited by backend", retry_after=retry_after)
                    if attempt + 1 < self._max_attempts:
                        self._sleep(min(retry_after, 30.0))
                        continue
                    raise last_rate_limit
                if resp.status_code >= 400:
                    raise SentinelError(f"completion endpoint returned {resp.status_code}: {resp.text[:200]}")
                body = resp.json()
                return [choice["message"]["content"] for choice in body["choices"]]
        raise last_rate_limit or BackendTimeout("no attempts made")


class ScriptedBackend:
    """Replays recorded completions keyed by the request digest.

    An unknown request is a test-authoring error and raises FixtureMiss;
    nothing is ever improvised here.
    """

    name = "scripted"

    def __init__(self, fixture_dir: Optional[Path] = None):
        self._dir = Path(fixture_dir) if fixture_dir else None
        self._table: dict[str, list[str]] = {}
        if self._dir and self._dir.exists():
            for path in sorted(self._dir.glob("*.json")):
                doc = json.loads(path.read_text(encoding="utf-8"))
                self._table[doc["digest"]] = doc["completions"]

    def complete(self, request: CompletionRequest) -> list[str]:
        digest = request.digest()
        if digest not in self._table:
            raise FixtureMiss(f"no recorded completion for request {digest}")
        completions = self._table[digest]
        return list(completions[: request.sample_count]) + [completions[-1]] * max(
            0, request.sample_count - len(completions)
        )

    def record(self, request: CompletionRequest, completions: list[str]) -> None:
        digest = request.digest()
        self._table[digest] = list(completions)
        if self._dir:
            self._dir.mkdir(parents=True, exist_ok=True)
            doc = {"digest": digest, "request": request.to_doc(), "completions": list(completions)}
            path = self._dir / f"{digest}.json"
            path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def __len__(self) -> int:
        return len(self._table)


class RecordingBackend:
    """Passes requests to an inner backend and records the transcript."""

    name = "recording"

    def __init__(self, inner, scripted: ScriptedBackend):
        self._inner = inner
        self._scripted = scripted

    def complete(self, request: CompletionRequest) -> list[str]:
        completions = self._inner.complete(request)
        self._scripted.record(request, completions)
        return completions
