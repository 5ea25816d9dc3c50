"""Completion backends

A backend turns a prompt into text plus token counts. The live backend talks
HTTP, the replay backend answers from recorded completions (falling through
to a live backend in record mode), and the oracle backend answers from a
ground-truth file for offline runs.
"""

import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from datetime import datetime, timezone
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional

import httpx
from pydantic import BaseModel, Field
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session

from src.data.artifacts import read_artifact, sha256_text
from src.data.models import CompletionRecordModel
from src.data.repositories import CompletionRecordRepository
from src.domain.exceptions import BackendAuthError, BackendError, ConfigError
from src.domain.models import TokenUsage
from src.services.prompts import PromptMode, parse_semantic_prompt, prompt_mode_of, segment_text_from_prompt

logger = logging.getLogger(__name__)

ORACLE_ARTIFACT = "oracle_answers"
EMPTY_EXTRACTION = '{"entities": [], "relationships": []}'


class CompletionRequest(BaseModel):
    prompt: str
    temperature: float = Field(default=0.1, ge=0.0, le=1.0)
    max_tokens: int = Field(default=16000, ge=1)
    model_name: str = ""


class CompletionResponse(BaseModel):
    text: str
    input_tokens: int = 0
    output_tokens: int = 0

    @property
    def usage(self) -> TokenUsage:
        return TokenUsage(input_tokens=self.input_tokens, output_tokens=self.output_tokens)


class CompletionBackend(ABC):
    """Abstract base for completion backends; counts calls across threads"""

    kind = "abstract"

    def __init__(self):
        self._lock = threading.Lock()
        self._calls = 0

    @property
    def call_count(self) -> int:
        return self._calls

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self._calls += 1
        return self._complete(request)

    @abstractmethod
    def _complete(self, request: CompletionRequest) -> CompletionResponse:
        """Produce one completion"""
        pass


def estimate_tokens(text: str) -> int:
    """Rough count for backends that do not report usage"""
    return max(1, len(text) // 4) if text else 0


class LiveCompletionBackend(CompletionBackend):
    """HTTP chat-completion backend (OpenAI or Anthropic wire format)"""

    kind = "live"

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        api_key_env: str = "REGKG_API_KEY",
        api_style: str = "openai",
        timeout_seconds: float = 120.0,
        max_retries: int = 2,
        retry_backoff: float = 1.0,
        client: Optional[httpx.Client] = None,
    ):
        super().__init__()
        self.endpoint = endpoint
        self.model_name = model_name
        self.api_key_env = api_key_env
        self.api_style = api_style
        self.max_retries = max_retries
        self.retry_backoff = retry_backoff
        self.client = client or httpx.Client(timeout=timeout_seconds)

    def _headers(self) -> Dict[str, str]:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise BackendAuthError(f"Environment variable {self.api_key_env} is not set")
        if self.api_style == "anthropic":
            return {"x-api-key": key, "anthropic-version": "2023-06-01", "content-type": "application/json"}
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _payload(self, request: CompletionRequest) -> dict:
        return {
            "model": request.model_name or self.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    @staticmethod
    def parse_body(body: dict) -> CompletionResponse:
        """Read text and usage from either wire format"""
        try:
            if "choices" in body:
                text = body["choices"][0]["message"]["content"] or ""
                usage = body.get("usage") or {}
                return CompletionResponse(
                    text=text,
                    input_tokens=usage.get("prompt_tokens", 0),
                    output_tokens=usage.get("completion_tokens", 0),
                )
            if isinstance(body.get("content"), list):
                text = "".join(block.get("text", "") for block in body["content"] if block.get("type") == "text")
                usage = body.get("usage") or {}
                return CompletionResponse(
                    text=text,
                    input_tokens=usage.get("input_tokens", 0),
                    output_tokens=usage.get("output_tokens", 0),
                )
        except (KeyError, IndexError, TypeError, AttributeError) as e:
            raise BackendError(f"Malformed completion response: {e}")
        raise BackendError("Unrecognised completion response format")

    def _complete(self, request: CompletionRequest) -> CompletionResponse:
        headers = self._headers()
        payload = self._payload(request)
        attempt = 0
        while True:
            try:
                response = self.client.post(self.endpoint, headers=headers, json=payload)
            except httpx.HTTPError as e:
                logger.error(f"Completion request to {self.endpoint} failed: {e}")
                if attempt >= self.max_retries:
                    raise BackendError(f"Transport error: {e}")
            else:
                if response.status_code in (401, 403):
                    raise BackendAuthError(f"Backend rejected credentials (HTTP {response.status_code})")
                if response.status_code < 400:
                    try:
                        return self.parse_body(response.json())
                    except json.JSONDecodeError as e:
                        raise BackendError(f"Completion response is not JSON: {e}")
                retryable = response.status_code == 429 or response.status_code >= 500
                logger.error(f"Completion request failed with HTTP {response.status_code}")
                if not retryable or attempt >= self.max_retries:
                    raise BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
            attempt += 1
            time.sleep(self.retry_backoff * attempt)


class ReplayCompletionBackend(CompletionBackend):
    """
    Answers from recorded completions keyed by sha256(prompt).

    With a fallback backend (record mode) a miss is answered live and the
    answer is persisted for the next run.
    """

    kind = "replay"

    def __init__(self, session: Session, fallback: Optional[CompletionBackend] = None, model_name: str = ""):
        super().__init__()
        self.repo = CompletionRecordRepository(session)
        self.fallback = fallback
        self.model_name = model_name
        self._store_lock = threading.Lock()

    def _complete(self, request: CompletionRequest) -> CompletionResponse:
        key = sha256_text(request.prompt)
        with self._store_lock:
            try:
                cached = self.repo.read(key)
            except SQLAlchemyError as e:
                self.repo.session.rollback()
                raise BackendError(f"Replay store lookup failed for {key[:12]}: {e}")
        if cached:
            return CompletionResponse(
                text=cached.response_text,
                input_tokens=cached.input_tokens,
                output_tokens=cached.output_tokens,
            )

        if self.fallback is None:
            raise BackendError(f"No recorded completion for prompt {key[:12]}")

        response = self.fallback.complete(request)
        record = CompletionRecordModel(
            prompt_sha256=key,
            model_name=request.model_name or self.model_name,
            prompt=request.prompt,
            response_text=response.text,
            input_tokens=response.input_tokens,
            output_tokens=response.output_tokens,
            created_at=datetime.now(timezone.utc),
        )
        with self._store_lock:
            try:
                self.repo.upsert(record)
            except SQLAlchemyError as e:
                # the session is unusable until rolled back
                self.repo.session.rollback()
                logger.error(f"Failed to persist completion {key[:12]}: {e}")
        return response


class OracleAnswers(BaseModel):
    """Ground-truth answers, keyed by sha256 of the segment text"""
    doc_id: str = ""
    ontology: Dict[str, str] = {}
    baseline: Dict[str, str] = {}
    reject_ids: List[str] = []
    reject_labels: List[str] = []

    @classmethod
    def from_file(cls, path) -> "OracleAnswers":
        payload = read_artifact(path, expected=ORACLE_ARTIFACT)
        payload.pop("header", None)
        return cls(**payload)


class OracleCompletionBackend(CompletionBackend):
    """
    Offline backend for synthetic corpora and fixtures.

    Extraction prompts are answered with the recorded payload for their
    segment text. Semantic checks answer "no" for rejected ids or labels and
    "yes" otherwise. A `fail_on` predicate lets tests inject backend errors.
    """

    kind = "oracle"

    def __init__(
        self,
        answers: Optional[OracleAnswers] = None,
        reject_ids: Iterable[str] = (),
        reject_labels: Iterable[str] = (),
        fail_on: Optional[Callable[[str], bool]] = None,
    ):
        super().__init__()
        self.answers = answers or OracleAnswers()
        self.reject_ids: FrozenSet[str] = frozenset(reject_ids) | frozenset(self.answers.reject_ids)
        self.reject_labels: FrozenSet[str] = frozenset(
            label.casefold() for label in list(reject_labels) + list(self.answers.reject_labels)
        )
        self.fail_on = fail_on
        self.semantic_requests: List[str] = []

    def _complete(self, request: CompletionRequest) -> CompletionResponse:
        if self.fail_on and self.fail_on(request.prompt):
            raise BackendError("Injected oracle failure")
        query = parse_semantic_prompt(request.prompt)
        if query is not None:
            with self._lock:
                self.semantic_requests.append(query.entity_id)
            rejected = query.entity_id in self.reject_ids or query.label.casefold() in self.reject_labels
            text = json.dumps({"verdict": "no" if rejected else "yes", "reason": "oracle"})
        else:
            text = self._extraction_answer(request.prompt)
        return CompletionResponse(
            text=text,
            input_tokens=estimate_tokens(request.prompt),
            output_tokens=estimate_tokens(text),
        )

    def _extraction_answer(self, prompt: str) -> str:
        content = segment_text_from_prompt(prompt)
        if content is None:
            raise BackendError("Oracle cannot answer a prompt without segment text")
        table = self.answers.baseline if prompt_mode_of(prompt) == PromptMode.BASELINE else self.answers.ontology
        answer = table.get(sha256_text(content))
        if answer is None:
            logger.warning(f"Oracle has no answer for segment text {sha256_text(content)[:12]}")
            return EMPTY_EXTRACTION
        return answer


def build_backend(settings, session_factory: Optional[Callable[[], Session]] = None) -> CompletionBackend:
    """
    Backend for a `BackendSettings` section.

    The replay backend needs a session factory over an initialized replay
    database; in record mode it wraps a live backend.
    """
    kind = getattr(settings.kind, "value", settings.kind)

    def live() -> LiveCompletionBackend:
        return LiveCompletionBackend(
            endpoint=settings.endpoint,
            model_name=settings.model,
            api_key_env=settings.api_key_env,
            api_style=settings.api_style,
            timeout_seconds=settings.timeout_seconds,
            max_retries=settings.max_retries,
        )

    if kind == "live":
        return live()
    if kind == "replay":
        if session_factory is None:
            raise ConfigError("Replay backend needs an initialized replay database")
        return ReplayCompletionBackend(
            session_factory(),
            fallback=live() if settings.record else None,
            model_name=settings.model,
        )
    if kind == "oracle":
        if not settings.oracle_path:
            raise ConfigError("Oracle backend needs backend.oracle_path")
        return OracleCompletionBackend(OracleAnswers.from_file(settings.oracle_path))
    raise ConfigError(f"Unknown backend kind {kind!r}")
