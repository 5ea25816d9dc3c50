"""Tests for completion backends and the replay store"""

import json

import httpx
import pytest
from sqlalchemy import event
from sqlalchemy.exc import OperationalError

from config.settings import BackendSettings
from src.data.artifacts import sha256_text
from src.data.models import CompletionRecordModel
from src.data.repositories import CompletionRecordRepository
from src.domain.exceptions import BackendAuthError, BackendError, ConfigError
from src.services.completion import (
    EMPTY_EXTRACTION,
    CompletionBackend,
    CompletionRequest,
    CompletionResponse,
    LiveCompletionBackend,
    OracleAnswers,
    OracleCompletionBackend,
    ReplayCompletionBackend,
    build_backend,
    estimate_tokens,
)
from src.services.extraction_service import extract_document
from src.services.prompts import build_ontology_prompt, build_semantic_prompt

OPENAI_BODY = {
    "choices": [{"message": {"content": '{"entities": [], "relationships": []}'}}],
    "usage": {"prompt_tokens": 1200, "completion_tokens": 80},
}
ANTHROPIC_BODY = {
    "content": [{"type": "text", "text": '{"verdict": "yes"}'}],
    "usage": {"input_tokens": 300, "output_tokens": 12},
}


class EchoBackend(CompletionBackend):
    def _complete(self, request: CompletionRequest) -> CompletionResponse:
        return CompletionResponse(text=f"ok:{request.prompt}", input_tokens=3, output_tokens=1)


@pytest.fixture
def locked_once():
    """The next INSERT into the replay store fails as if the database were locked"""
    state = {"failures": 0}

    def _fail(mapper, connection, target):
        if state["failures"] == 0:
            state["failures"] += 1
            raise OperationalError("INSERT INTO completion_records", {}, Exception("database is locked"))

    event.listen(CompletionRecordModel, "before_insert", _fail)
    yield state
    event.remove(CompletionRecordModel, "before_insert", _fail)


def _live(handler, api_style="openai", **kwargs) -> LiveCompletionBackend:
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return LiveCompletionBackend(
        endpoint="https://llm.example.test/v1/chat",
        model_name="gpt-4o",
        api_key_env="REGKG_TEST_KEY",
        api_style=api_style,
        retry_backoff=0.0,
        client=client,
        **kwargs,
    )


class TestLiveBackend:
    """HTTP wire formats and error handling"""

    @pytest.fixture(autouse=True)
    def api_key(self, monkeypatch):
        monkeypatch.setenv("REGKG_TEST_KEY", "sk-test")

    def test_openai_format(self):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["auth"] = request.headers["Authorization"]
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=OPENAI_BODY)

        response = _live(handler).complete(CompletionRequest(prompt="hello", temperature=0.0, max_tokens=50))
        assert response.text == '{"entities": [], "relationships": []}'
        assert (response.input_tokens, response.output_tokens) == (1200, 80)
        assert seen["auth"] == "Bearer sk-test"
        assert seen["body"]["messages"] == [{"role": "user", "content": "hello"}]
        assert seen["body"]["model"] == "gpt-4o"
        assert seen["body"]["max_tokens"] == 50

    def test_anthropic_format(self):
        def handler(request: httpx.Request) -> httpx.Response:
            assert request.headers["x-api-key"] == "sk-test"
            return httpx.Response(200, json=ANTHROPIC_BODY)

        response = _live(handler, api_style="anthropic").complete(CompletionRequest(prompt="check"))
        assert response.text == '{"verdict": "yes"}'
        assert response.usage.total_tokens == 312

    def test_rejected_credentials(self):
        backend = _live(lambda request: httpx.Response(401, json={"error": "bad key"}))
        with pytest.raises(BackendAuthError):
            backend.complete(CompletionRequest(prompt="x"))

    def test_missing_key(self, monkeypatch):
        monkeypatch.delenv("REGKG_TEST_KEY")
        with pytest.raises(BackendAuthError):
            _live(lambda request: httpx.Response(200, json=OPENAI_BODY)).complete(CompletionRequest(prompt="x"))

    def test_retry_on_rate_limit(self):
        """429 is retried, then the answer is used"""
        replies = [httpx.Response(429, text="slow down"), httpx.Response(200, json=OPENAI_BODY)]
        backend = _live(lambda request: replies.pop(0))
        assert backend.complete(CompletionRequest(prompt="x")).input_tokens == 1200

    def test_retries_exhausted(self):
        calls = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(1)
            return httpx.Response(503, text="unavailable")

        with pytest.raises(BackendError):
            _live(handler, max_retries=2).complete(CompletionRequest(prompt="x"))
        assert len(calls) == 3

    def test_client_error_not_retried(self):
        calls = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(1)
            return httpx.Response(400, text="bad request")

        with pytest.raises(BackendError):
            _live(handler).complete(CompletionRequest(prompt="x"))
        assert len(calls) == 1

    def test_unrecognised_body(self):
        with pytest.raises(BackendError):
            LiveCompletionBackend.parse_body({"something": "else"})


class TestReplayBackend:
    """Recorded completions keyed by prompt hash"""

    def _record(self, prompt, text="{}"):
        return CompletionRecordModel(prompt_sha256=sha256_text(prompt), model_name="gpt-4o", prompt=prompt,
                                     response_text=text, input_tokens=10, output_tokens=2)

    def test_hit(self, db_session):
        CompletionRecordRepository(db_session).create(self._record("prompt one", '{"verdict": "no"}'))
        response = ReplayCompletionBackend(db_session).complete(CompletionRequest(prompt="prompt one"))
        assert response.text == '{"verdict": "no"}'
        assert (response.input_tokens, response.output_tokens) == (10, 2)

    def test_miss_without_fallback(self, db_session):
        with pytest.raises(BackendError):
            ReplayCompletionBackend(db_session).complete(CompletionRequest(prompt="unknown"))

    def test_record_mode(self, db_session, make_segment):
        """A miss goes to the fallback once and is stored"""
        fallback = OracleCompletionBackend(OracleAnswers())
        replay = ReplayCompletionBackend(db_session, fallback=fallback, model_name="oracle")
        prompt = build_ontology_prompt(make_segment())
        first = replay.complete(CompletionRequest(prompt=prompt))
        second = replay.complete(CompletionRequest(prompt=prompt))
        assert first.text == second.text == EMPTY_EXTRACTION
        assert fallback.call_count == 1
        repo = CompletionRecordRepository(db_session)
        assert repo.count() == 1
        assert repo.read(sha256_text(prompt)).model_name == "oracle"

    def test_failed_save_keeps_session_usable(self, db_session, locked_once):
        """A save that fails is logged and the next prompt still works"""
        replay = ReplayCompletionBackend(db_session, fallback=EchoBackend())
        assert replay.complete(CompletionRequest(prompt="a")).text == "ok:a"
        assert replay.complete(CompletionRequest(prompt="b")).text == "ok:b"
        assert locked_once["failures"] == 1
        repo = CompletionRecordRepository(db_session)
        assert repo.read(sha256_text("a")) is None
        assert repo.read(sha256_text("b")).response_text == "ok:b"
        assert repo.read(sha256_text("b")).created_at is not None

    def test_extraction_survives_failed_save(self, db_session, locked_once, make_segment):
        """Every segment is extracted although the first save fails"""
        segments = [make_segment(f"Section {i} on data security", seg_id=f"seg_{i}") for i in range(1, 4)]
        replay = ReplayCompletionBackend(db_session, fallback=OracleCompletionBackend(OracleAnswers()))
        run = extract_document(segments, replay, parallelism=2)
        assert run.failures == []
        assert len(run.results) == 3
        assert CompletionRecordRepository(db_session).count() == 2

    def test_upsert_replaces(self, db_session):
        repo = CompletionRecordRepository(db_session)
        repo.create(self._record("p", "old"))
        repo.upsert(self._record("p", "new"))
        assert repo.read(sha256_text("p")).response_text == "new"
        assert repo.count() == 1


class TestOracleBackend:
    """Offline answers"""

    def test_semantic_rejects(self, make_metric):
        backend = OracleCompletionBackend(reject_ids=["metric_doc_4_01"])
        rejected = backend.complete(CompletionRequest(prompt=build_semantic_prompt(make_metric("metric_doc_4_01", "A"))))
        accepted = backend.complete(CompletionRequest(prompt=build_semantic_prompt(make_metric("metric_doc_4_02", "B"))))
        assert json.loads(rejected.text)["verdict"] == "no"
        assert json.loads(accepted.text)["verdict"] == "yes"
        assert backend.semantic_requests == ["metric_doc_4_01", "metric_doc_4_02"]

    def test_unknown_segment_answers_empty(self, make_segment):
        backend = OracleCompletionBackend()
        response = backend.complete(CompletionRequest(prompt=build_ontology_prompt(make_segment())))
        assert response.text == EMPTY_EXTRACTION
        assert response.input_tokens == estimate_tokens(build_ontology_prompt(make_segment()))

    def test_prompt_without_segment(self):
        with pytest.raises(BackendError):
            OracleCompletionBackend().complete(CompletionRequest(prompt="free text"))


class TestBuildBackend:
    """Backend selection from settings"""

    def test_live(self):
        assert isinstance(build_backend(BackendSettings(kind="live")), LiveCompletionBackend)

    def test_replay_needs_store(self):
        with pytest.raises(ConfigError):
            build_backend(BackendSettings(kind="replay"))

    def test_replay(self, db_session):
        backend = build_backend(BackendSettings(kind="replay"), lambda: db_session)
        assert isinstance(backend, ReplayCompletionBackend)
        assert backend.fallback is None

    def test_oracle_needs_path(self):
        with pytest.raises(ConfigError):
            build_backend(BackendSettings(kind="oracle"))

    def test_estimate_tokens(self):
        assert estimate_tokens("") == 0
        assert estimate_tokens("abc") == 1
        assert estimate_tokens("a" * 400) == 100
