"""Client for completion-style endpoints that expose per-token log-probabilities.

Scoring sends ``prompt = context + continuation`` with echo-logprobs enabled
and sums the token log-probabilities whose text offsets fall inside the
continuation span (natural log throughout). Generation sends the context
alone with a token cap and stop sequences. One call is one logical model
evaluation regardless of transport retries.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field

import httpx


class ModelClientError(Exception):
    pass


class TransportError(ModelClientError):
    """Endpoint unreachable or persistently failing after retries."""


class CapabilityError(ModelClientError):
    """Endpoint rejected the request or lacks the required response fields."""


class ConfigurationError(ModelClientError):
    """Client-side misconfiguration (e.g. credential variable unset)."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env: str = ""
    max_parallel: int = 4
    timeout_seconds: float = 60.0
    retry_limit: int = 2

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ConfigurationError("max_parallel must be >= 1")
        if self.timeout_seconds <= 0:
            raise ConfigurationError("timeout_seconds must be > 0")
        if self.retry_limit < 0:
            raise ConfigurationError("retry_limit must be >= 0")


@dataclass(frozen=True)
class ScoreResult:
    total_logprob: float
    continuation_token_count: int
    continuation_char_count: int
    wall_seconds: float


@dataclass(frozen=True)
class GenResult:
    text: str
    generated_token_count: int
    stopped_by: str  # stop_sequence | max_tokens | end_of_sequence
    wall_seconds: float


@dataclass(frozen=True)
class Capabilities:
    can_score: bool
    can_generate: bool
    diagnostics: list[str] = field(default_factory=list)


_RETRY_STATUS = {408, 425, 429, 500, 502, 503, 504}


class ModelClient:
    """Thread-safe handle; at most ``max_parallel`` requests in flight."""

    def __init__(self, config: EndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._semaphore = threading.Semaphore(config.max_parallel)
        headers = {}
        if config.api_key_env:
            key = os.environ.get(config.api_key_env)
            if key is None:
                raise ConfigurationError(
                    f"credential environment variable {config.api_key_env!r} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(
            timeout=httpx.Timeout(config.timeout_seconds),
            headers=headers,
            transport=transport,
        )
        self._url = config.base_url.rstrip("/") + "/completions"

    @property
    def max_parallel(self) -> int:
        return self.config.max_parallel

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ModelClient":
        return self

    def __exit__(self, *_exc) -> None:
        self.close()

    def _post(self, payload: dict) -> dict:
        attempts = self.config.retry_limit + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(min(2.0, 0.1 * 2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    response = self._http.post(self._url, json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code in _RETRY_STATUS:
                last_error = TransportError(
                    f"endpoint returned {response.status_code}: {response.text[:200]}"
                )
                continue
            if response.status_code in (401, 403):
                raise ConfigurationError(
                    f"endpoint rejected credentials ({response.status_code})"
                )
            if response.status_code >= 400:
                raise CapabilityError(
                    f"endpoint rejected request ({response.status_code}): {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise CapabilityError(f"endpoint returned non-JSON body: {exc}") from exc
        raise TransportError(
            f"request failed after {attempts} attempt(s): {last_error}"
        ) from (last_error if isinstance(last_error, Exception) else None)

    def score_continuation(self, context: str, continuation: str) -> ScoreResult:
        """Sum of continuation-token log-probabilities given the context;
        exactly one model forward evaluation."""
        if not continuation:
            raise ValueError("continuation must be non-empty")
        start = time.perf_counter()
        data = self._post(
            {
                "model": self.config.model_name,
                "prompt": context + continuation,
                "max_tokens": 0,
                "echo": True,
                "logprobs": 0,
                "temperature": 0.0,
            }
        )
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError) as exc:
            raise CapabilityError("response carries no choices") from exc
        logprobs = choice.get("logprobs")
        if not isinstance(logprobs, dict):
            raise CapabilityError("endpoint does not echo logprobs; cannot score continuations")
        token_logprobs = logprobs.get("token_logprobs")
        offsets = logprobs.get("text_offset")
        if token_logprobs is None or offsets is None:
            raise CapabilityError("logprobs response lacks token_logprobs/text_offset")
        boundary = len(context)
        total = 0.0
        count = 0
        for offset, value in zip(offsets, token_logprobs):
            if offset < boundary:
                continue
            if value is None:
                raise CapabilityError("missing log-probability for a continuation token")
            total += float(value)
            count += 1
        if count == 0:
            raise CapabilityError(
                "no token starts inside the continuation span; endpoint tokenization "
                "merged the context/continuation boundary"
            )
        return ScoreResult(
            total_logprob=total,
            continuation_token_count=count,
            continuation_char_count=len(continuation),
            wall_seconds=time.perf_counter() - start,
        )

    def generate(self, context: str, max_tokens: int, stop_sequences: list[str]) -> GenResult:
        """Free-text completion, truncated at the first stop sequence or the
        token cap. Token counts are endpoint-reported."""
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        start = time.perf_counter()
        payload = {
            "model": self.config.model_name,
            "prompt": context,
            "max_tokens": max_tokens,
            "temperature": 0.0,
        }
        if stop_sequences:
            payload["stop"] = stop_sequences
        data = self._post(payload)
        try:
            choice = data["choices"][0]
            text = choice["text"]
        except (KeyError, IndexError) as exc:
            raise CapabilityError("response carries no completion text") from exc
        usage = data.get("usage") or {}
        token_count = usage.get("completion_tokens")
        if token_count is None:
            raise CapabilityError("endpoint does not report completion token usage")
        finish = choice.get("finish_reason")
        cut_positions = [text.find(s) for s in stop_sequences if s and s in text]
        if cut_positions:
            text = text[: min(cut_positions)]
            stopped_by = "stop_sequence"
        elif finish == "length":
            stopped_by = "max_tokens"
        else:
            stopped_by = "end_of_sequence"
        return GenResult(
            text=text,
            generated_token_count=int(token_count),
            stopped_by=stopped_by,
            wall_seconds=time.perf_counter() - start,
        )

    def probe_capabilities(self) -> Capabilities:
        """Minimal call of each kind; transport failure reports both flags false."""
        diagnostics: list[str] = []
        try:
            self.score_continuation("Question: ping\nAnswer:", " pong")
            can_score = True
        except TransportError as exc:
            return Capabilities(False, False, [f"transport: {exc}"])
        except ModelClientError as exc:
            can_score = False
            diagnostics.append(f"score: {exc}")
        try:
            self.generate("Question: ping\nAnswer:", max_tokens=1, stop_sequences=[])
            can_generate = True
        except TransportError as exc:
            return Capabilities(False, False, [f"transport: {exc}"])
        except ModelClientError as exc:
            can_generate = False
            diagnostics.append(f"generate: {exc}")
        return Capabilities(can_score, can_generate, diagnostics)
