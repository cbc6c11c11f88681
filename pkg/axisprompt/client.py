"""Chat-completions client with per-scene isolation, bounded concurrency and retries."""

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import httpx

from axisprompt.config import EndpointConfig, settings
from axisprompt.exceptions import (
    AuthError,
    BadRequest,
    ChatError,
    GiveUp,
    RateLimited,
    TransportError,
)
from axisprompt.models import (
    ChatMessage,
    ChatRequest,
    ChatResponse,
    ImagePart,
    PromptBundle,
    TextPart,
)

logger = logging.getLogger(__name__)

Responder = Callable[[ChatRequest, PromptBundle], ChatResponse]


def _message_text(content: Any) -> str:
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        return "".join(part.get("text", "") for part in content if isinstance(part, dict))
    raise ChatError(f"unexpected message content type {type(content).__name__}")


class HttpResponder:
    """Posts requests to an HTTPS chat-completions endpoint."""

    def __init__(self, endpoint: EndpointConfig, client: Optional[httpx.Client] = None) -> None:
        self.endpoint = endpoint
        self._owns_client = client is None
        self._client = client or httpx.Client(
            timeout=endpoint.timeout_s, headers={"User-Agent": settings.user_agent}
        )

    def _headers(self) -> Dict[str, str]:
        headers = dict(self.endpoint.headers)
        name = self.endpoint.api_key_env
        if name:
            key = os.environ.get(name)
            if not key:
                raise AuthError(f"environment variable {name} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def __call__(self, request: ChatRequest, bundle: PromptBundle) -> ChatResponse:
        headers = self._headers()
        started = time.monotonic()
        try:
            response = self._client.post(
                self.endpoint.url, json=request.to_payload(), headers=headers
            )
        except httpx.TransportError as e:
            raise TransportError(f"request failed: {e}") from e
        latency = time.monotonic() - started

        status = response.status_code
        if status in (401, 403):
            raise AuthError(f"endpoint rejected credentials ({status})", status)
        if status == 429:
            raise RateLimited("endpoint rate limit reached", status)
        if status >= 500:
            raise TransportError(f"endpoint error {status}", status)
        if status >= 400:
            detail = response.text[:200]
            raise BadRequest(f"endpoint rejected the request ({status}): {detail}", status)

        try:
            body = response.json()
            text = _message_text(body["choices"][0]["message"]["content"])
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ChatError(f"malformed endpoint response: {e}", status) from e
        usage = {k: v for k, v in (body.get("usage") or {}).items() if isinstance(v, int)}
        return ChatResponse(
            text=text, model=body.get("model") or request.model, usage=usage, latency=latency
        )

    def close(self) -> None:
        if self._owns_client:
            self._client.close()


class ChatClient:
    """
    Sends one fresh single-turn request per prompt bundle.

    The client holds no conversation state, so scenes never share message
    history. Concurrent sends are bounded by endpoint.max_in_flight, and
    retryable failures back off exponentially. Shareable across threads.
    """

    def __init__(
        self,
        endpoint: EndpointConfig,
        responder: Optional[Responder] = None,
        sleep: Callable[[float], None] = time.sleep,
        transcript_path: Optional[Path] = None,
    ) -> None:
        """
        Args:
            endpoint: Endpoint and retry settings
            responder: Callable answering a request; defaults to HTTP
            sleep: Backoff sleep function
            transcript_path: JSONL file receiving one record per request, answered or failed
        """
        self.endpoint = endpoint
        self._responder: Responder = responder or HttpResponder(endpoint)
        self._sleep = sleep
        self._limiter = threading.BoundedSemaphore(endpoint.max_in_flight)
        self._transcript_lock = threading.Lock()
        self.transcript_path = Path(transcript_path) if transcript_path else None

    def close(self) -> None:
        close = getattr(self._responder, "close", None)
        if callable(close):
            close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *args: Any) -> None:
        self.close()

    def backoff_schedule(self) -> List[float]:
        """Delays before attempts 2..max_attempts."""
        e = self.endpoint
        return [e.backoff_base * e.backoff_factor**k for k in range(e.max_attempts - 1)]

    def build_request(self, bundle: PromptBundle) -> ChatRequest:
        parts: List[Union[TextPart, ImagePart]] = [TextPart(text=bundle.task_text)]
        if bundle.points_text:
            parts.append(TextPart(text=bundle.points_text))
        parts.extend(ImagePart.from_png(p, self.endpoint.image_detail) for p in bundle.images)
        return ChatRequest(
            model=self.endpoint.model,
            messages=[ChatMessage(role="user", content=parts)],
            temperature=self.endpoint.temperature,
            max_tokens=self.endpoint.max_tokens,
        )

    def send(self, bundle: PromptBundle) -> ChatResponse:
        """
        Send one bundle, retrying transient failures.

        Raises:
            AuthError: Credentials missing or rejected (never retried)
            BadRequest: The endpoint rejected the request
            GiveUp: Every attempt failed with a retryable error
        """
        request = self.build_request(bundle)
        delays = self.backoff_schedule()
        attempts = self.endpoint.max_attempts
        last_error: Optional[ChatError] = None
        for attempt in range(1, attempts + 1):
            try:
                with self._limiter:
                    response = self._responder(request, bundle)
            except ChatError as e:
                if not e.retryable:
                    logger.error(f"Scene {bundle.scene_id}: {type(e).__name__}: {e}")
                    self._record(bundle, request, error=e, attempts=attempt)
                    raise
                last_error = e
                if attempt == attempts:
                    break
                delay = delays[attempt - 1]
                logger.warning(
                    f"Scene {bundle.scene_id}: {e}; retrying in {delay:.1f}s "
                    f"(attempt {attempt}/{attempts})"
                )
                self._sleep(delay)
                continue
            response = response.model_copy(update={"attempts": attempt})
            self._record(bundle, request, response, attempts=attempt)
            logger.info(
                f"Scene {bundle.scene_id}: answered in {response.latency:.2f}s "
                f"after {attempt} attempt(s)"
            )
            return response
        give_up = GiveUp(
            f"scene {bundle.scene_id}: gave up after {attempts} attempts: {last_error}", attempts
        )
        self._record(bundle, request, error=give_up, attempts=attempts)
        raise give_up

    def send_many(self, bundles: Sequence[PromptBundle]) -> List[Union[ChatResponse, ChatError]]:
        """Send bundles concurrently; failures are returned in place of responses."""

        def one(bundle: PromptBundle) -> Union[ChatResponse, ChatError]:
            try:
                return self.send(bundle)
            except ChatError as e:
                return e

        with ThreadPoolExecutor(max_workers=self.endpoint.max_in_flight) as pool:
            return list(pool.map(one, bundles))

    def _record(
        self,
        bundle: PromptBundle,
        request: ChatRequest,
        response: Optional[ChatResponse] = None,
        error: Optional[ChatError] = None,
        attempts: int = 1,
    ) -> None:
        """Append one transcript entry; failed requests carry an error instead of a response."""
        if self.transcript_path is None:
            return
        entry = {
            "scene_id": bundle.scene_id,
            "request_hash": request.digest(),
            "image_hashes": [hashlib.sha256(p).hexdigest() for p in bundle.images],
            "task_text": bundle.task_text,
            "response_text": response.text if response else None,
            "latency": response.latency if response else None,
            "usage": response.usage if response else {},
            "model": response.model if response else request.model,
            "attempts": attempts,
            "error": f"{type(error).__name__}: {error}" if error else None,
        }
        with self._transcript_lock:
            self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.transcript_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, sort_keys=True) + "\n")


def read_transcript(path: Path) -> List[Dict[str, Any]]:
    """Transcript records in write order."""
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
