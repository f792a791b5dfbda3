"""Uniform chat-completion gateway with schema-constrained structured output.

One HTTP provider speaks a chat-completions-shaped protocol; two mock
providers (scripted replay and a stochastic detector) make the whole pipeline
runnable offline and deterministic.  Every successful call reports the exact
token usage the provider returned; the cost ledger consumes those counts
unchanged.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol

import httpx

logger = logging.getLogger(__name__)

# Pass identifiers used to tag calls.  The two combined detect+verify prompts
# are distinct passes: one sees the raw report (f1), one the structured block
# (f2), so scripted fixtures can answer them differently.
PASS_EXTRACT = "p1"
PASS_DETECT = "p2"
PASS_VERIFY = "p3"
PASS_COMBINED_RAW = "combined_raw"
PASS_COMBINED_STRUCTURED = "combined_structured"

DETECTION_PASSES = frozenset(
    {PASS_DETECT, PASS_COMBINED_RAW, PASS_COMBINED_STRUCTURED}
)

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class GatewayError(Exception):
    """Base class for everything the gateway can fail with."""


class TransportFailure(GatewayError):
    """Network-level failure that survived all retries."""


class ProviderError(GatewayError):
    """Non-success HTTP status from the provider."""

    def __init__(self, status_code: int, body: str):
        super().__init__(f"provider returned HTTP {status_code}: {body[:200]}")
        self.status_code = status_code
        self.body = body


class ProtocolError(GatewayError):
    """Response missing required fields (usage, choices)."""


class OutputViolation(GatewayError):
    """Model reply does not satisfy the declared schema."""


class MalformedOutput(OutputViolation):
    """Reply is not a parseable JSON object."""


class SchemaViolation(OutputViolation):
    """Reply parses but violates the key constraints."""


class FixtureMiss(GatewayError):
    """Scripted mock has no fixture for the requested call."""


@dataclass(frozen=True)
class ModelSpec:
    """A model name plus its role in the cascade."""

    model_name: str
    role: str  # "lightweight" | "advanced"

    def __post_init__(self) -> None:
        if not self.model_name:
            raise ValueError("model_name must be non-empty")
        if self.role not in ("lightweight", "advanced"):
            raise ValueError(f"unknown model role: {self.role}")


@dataclass(frozen=True)
class SchemaConstraint:
    """Structured-output constraint: an object with exactly these string keys."""

    name: str
    required_keys: tuple[str, ...]
    strict: bool = True
    additional_properties_allowed: bool = False

    def __post_init__(self) -> None:
        if not self.required_keys:
            raise ValueError("required_keys must be nonempty")
        if self.strict and self.additional_properties_allowed:
            raise ValueError("strict schemas cannot allow additional properties")

    def to_json_schema(self) -> dict:
        return {
            "type": "object",
            "properties": {key: {"type": "string"} for key in self.required_keys},
            "required": list(self.required_keys),
            "additionalProperties": self.additional_properties_allowed,
        }


@dataclass(frozen=True)
class CompletionResult:
    content: str
    input_tokens: int
    output_tokens: int
    model_name: str
    latency_ms: float

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    api_key_ref: str = ""  # name of the environment variable holding the key
    timeout: float = 120.0
    max_retries: int = 3
    max_parallel: int = 4
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


class Provider(Protocol):
    """Anything that can answer one isolated chat-completion call."""

    def complete(
        self,
        model: ModelSpec,
        system_prompt: str,
        user_payload: str,
        schema: SchemaConstraint,
        *,
        pass_id: str = "",
        report_id: str = "",
    ) -> CompletionResult: ...


def validate_structured(content: str, schema: SchemaConstraint) -> dict[str, str]:
    """Parse and validate a structured reply against its schema.

    Returns a key->string map containing exactly the required keys.  Raises
    :class:`MalformedOutput` for unparseable content and
    :class:`SchemaViolation` for key-set or type violations, naming the
    offending key.
    """
    try:
        parsed = json.loads(content)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedOutput(f"unparseable model reply: {exc}") from exc
    if not isinstance(parsed, dict):
        raise MalformedOutput(
            f"model reply is not a JSON object: {type(parsed).__name__}"
        )
    for key in schema.required_keys:
        if key not in parsed:
            raise SchemaViolation(f"missing required key: {key}")
    if not schema.additional_properties_allowed:
        for key in parsed:
            if key not in schema.required_keys:
                raise SchemaViolation(f"unexpected key: {key}")
    for key in schema.required_keys:
        if not isinstance(parsed[key], str):
            raise SchemaViolation(f"key {key} must be a string")
    return {key: parsed[key] for key in schema.required_keys}


class HttpProvider:
    """Chat-completions client with retries, backoff, and usage capture.

    POSTs to ``{base_url}/chat/completions``.  Transport failures and
    retryable statuses (429, 5xx) are retried up to ``max_retries`` with
    exponential backoff; other non-success statuses fail immediately.  Each
    call is an isolated session: no conversational state is carried over.
    """

    def __init__(
        self,
        config: ProviderConfig,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.config = config
        if api_key is None and config.api_key_ref:
            api_key = os.environ.get(config.api_key_ref)
            if api_key is None:
                raise GatewayError(
                    f"credential environment variable not set: {config.api_key_ref}"
                )
        self._api_key = api_key
        self._client = httpx.Client(timeout=config.timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def complete(
        self,
        model: ModelSpec,
        system_prompt: str,
        user_payload: str,
        schema: SchemaConstraint,
        *,
        pass_id: str = "",
        report_id: str = "",
    ) -> CompletionResult:
        if not system_prompt or not user_payload:
            raise ValueError("prompts must be non-empty")
        body = {
            "model": model.model_name,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_payload},
            ],
            "response_format": {
                "type": "json_schema",
                "json_schema": {
                    "name": schema.name,
                    "strict": schema.strict,
                    "schema": schema.to_json_schema(),
                },
            },
        }
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"

        started = time.monotonic()
        response = self._post_with_retries(url, body, headers)
        latency_ms = (time.monotonic() - started) * 1000.0
        return _parse_completion_response(response, model.model_name, latency_ms)

    def _post_with_retries(
        self, url: str, body: dict, headers: dict[str, str]
    ) -> httpx.Response:
        attempts = self.config.max_retries + 1
        last_exc: Exception | None = None
        for attempt in range(attempts):
            if attempt > 0:
                time.sleep(self.config.backoff_base * 2 ** (attempt - 1))
            try:
                response = self._client.post(url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last_exc = exc
                logger.warning(
                    "transport failure (attempt %d/%d): %s", attempt + 1, attempts, exc
                )
                continue
            if response.status_code == 200:
                return response
            if response.status_code in RETRYABLE_STATUSES:
                last_exc = ProviderError(response.status_code, response.text)
                logger.warning(
                    "retryable HTTP %d (attempt %d/%d)",
                    response.status_code,
                    attempt + 1,
                    attempts,
                )
                continue
            raise ProviderError(response.status_code, response.text)
        if isinstance(last_exc, ProviderError):
            raise last_exc
        raise TransportFailure(
            f"request failed after {attempts} attempts: {last_exc}"
        ) from last_exc


def _parse_completion_response(
    response: httpx.Response, model_name: str, latency_ms: float
) -> CompletionResult:
    try:
        data = response.json()
    except (json.JSONDecodeError, ValueError) as exc:
        raise ProtocolError(f"provider response is not JSON: {exc}") from exc
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"provider response missing reply content: {exc}") from exc
    usage = data.get("usage")
    if not isinstance(usage, dict) or (
        "prompt_tokens" not in usage or "completion_tokens" not in usage
    ):
        raise ProtocolError("provider response missing usage fields")
    return CompletionResult(
        content=content,
        input_tokens=int(usage["prompt_tokens"]),
        output_tokens=int(usage["completion_tokens"]),
        model_name=model_name,
        latency_ms=latency_ms,
    )


@dataclass(frozen=True)
class ScriptedReply:
    reply: str
    input_tokens: int
    output_tokens: int


class ScriptedMockProvider:
    """Replays fixture replies keyed by (pass_id, report_id).

    A missing key is a :class:`FixtureMiss` naming the call.  Calls are
    logged (thread-safely) so tests can assert how often each pass ran.
    No network I/O ever happens here.
    """

    def __init__(self, fixtures: Mapping[tuple[str, str], ScriptedReply]):
        self._fixtures = dict(fixtures)
        self._lock = threading.Lock()
        self._calls: list[tuple[str, str]] = []

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedMockProvider":
        """Load fixtures from JSONL lines of
        ``{pass, report_id, reply, input_tokens, output_tokens}``."""
        fixtures: dict[tuple[str, str], ScriptedReply] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                key = (obj["pass"], obj["report_id"])
                reply = obj["reply"]
                if not isinstance(reply, str):
                    reply = json.dumps(reply)
                fixtures[key] = ScriptedReply(
                    reply=reply,
                    input_tokens=int(obj["input_tokens"]),
                    output_tokens=int(obj["output_tokens"]),
                )
        return cls(fixtures)

    @property
    def calls(self) -> list[tuple[str, str]]:
        with self._lock:
            return list(self._calls)

    def call_count(self, pass_id: str) -> int:
        with self._lock:
            return sum(1 for p, _ in self._calls if p == pass_id)

    def complete(
        self,
        model: ModelSpec,
        system_prompt: str,
        user_payload: str,
        schema: SchemaConstraint,
        *,
        pass_id: str = "",
        report_id: str = "",
    ) -> CompletionResult:
        with self._lock:
            self._calls.append((pass_id, report_id))
        fixture = self._fixtures.get((pass_id, report_id))
        if fixture is None:
            raise FixtureMiss(f"no fixture for pass={pass_id!r} report={report_id!r}")
        return CompletionResult(
            content=fixture.reply,
            input_tokens=fixture.input_tokens,
            output_tokens=fixture.output_tokens,
            model_name=model.model_name,
            latency_ms=0.0,
        )


def _unit_uniform(seed: int, pass_id: str, report_id: str) -> float:
    """Deterministic uniform draw in [0, 1) keyed by (seed, pass, report).

    Counter-based: each call derives its draw independently, so concurrency
    and call order never perturb the stream.
    """
    digest = hashlib.sha256()
    digest.update(seed.to_bytes(8, "big"))
    digest.update(pass_id.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(report_id.encode("utf-8"))
    return int.from_bytes(digest.digest()[:8], "big") / 2**64


class StochasticMockProvider:
    """Synthetic detector with tunable sensitivity/specificity.

    Detection passes flag a report with probability ``sensitivity`` when its
    label marks a true error and ``1 - specificity`` otherwise,
    deterministically for a fixed seed.  Extraction replies echo synthetic
    sections; the verifier pass confirms whatever candidate it is shown
    (pass-through), so end-to-end flag rates are governed by the detector.
    Token usage is a fixed function of payload length.
    """

    def __init__(
        self,
        sensitivity: float,
        specificity: float,
        error_labels: Mapping[str, bool],
        seed: int,
    ):
        if not 0.0 <= sensitivity <= 1.0:
            raise ValueError("sensitivity must be within [0, 1]")
        if not 0.0 <= specificity <= 1.0:
            raise ValueError("specificity must be within [0, 1]")
        self.sensitivity = sensitivity
        self.specificity = specificity
        self.error_labels = dict(error_labels)
        self.seed = seed

    def complete(
        self,
        model: ModelSpec,
        system_prompt: str,
        user_payload: str,
        schema: SchemaConstraint,
        *,
        pass_id: str = "",
        report_id: str = "",
    ) -> CompletionResult:
        if pass_id == PASS_EXTRACT:
            reply = json.dumps(
                {
                    "findings": f"Synthetic findings for {report_id}.",
                    "impression": f"Synthetic impression for {report_id}.",
                }
            )
        elif pass_id in DETECTION_PASSES:
            reply = json.dumps(self._detect(report_id))
        elif pass_id == PASS_VERIFY:
            reply = json.dumps(
                {
                    "error": f"confirmed candidate in {report_id}",
                    "error_reason": "verifier pass-through",
                }
            )
        else:
            raise FixtureMiss(f"stochastic mock cannot answer pass {pass_id!r}")
        return CompletionResult(
            content=reply,
            input_tokens=max(1, len(user_payload) // 4),
            output_tokens=max(1, len(reply) // 4),
            model_name=model.model_name,
            latency_ms=0.0,
        )

    def _detect(self, report_id: str) -> dict[str, str]:
        has_error = self.error_labels.get(report_id, False)
        flag_probability = self.sensitivity if has_error else 1.0 - self.specificity
        draw = _unit_uniform(self.seed, PASS_DETECT, report_id)
        if draw < flag_probability:
            return {
                "error": f"synthetic contradiction in {report_id}",
                "error_reason": "synthetic internal disagreement between sections",
            }
        return {"error": "no error", "error_reason": "N/A"}
