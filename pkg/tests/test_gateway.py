import json

import pytest

from faultloom.errors import (
    MissingFieldsError,
    NoStructuredObjectError,
    ReplayMissError,
    RetriesExhaustedError,
    UnknownModelError,
)
from faultloom.gateway import (
    ChatRequest,
    ChatResponse,
    Gateway,
    Transcript,
    extract_structured,
    provider_for_model,
    request_digest,
)

from fakes import FlakyProvider, ScriptedProvider, make_response

REQ = ChatRequest(model_id="openai/gpt-4o", system_text="sys", user_text="hello")


def test_digest_stable_and_semantic():
    assert request_digest(REQ) == request_digest(
        ChatRequest(model_id="openai/gpt-4o", system_text="sys", user_text="hello")
    )
    changed = ChatRequest(model_id="openai/gpt-4o", system_text="sys", user_text="hello!")
    assert request_digest(changed) != request_digest(REQ)
    other_model = ChatRequest(model_id="openai/gpt-4o-mini", system_text="sys", user_text="hello")
    assert request_digest(other_model) != request_digest(REQ)


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(model_id="m/x", system_text="", user_text="u")
    with pytest.raises(ValueError):
        ChatRequest(model_id="m/x", system_text="s", user_text="u", temperature=-1)


def test_replay_serves_stored_response(tmp_path):
    transcript = Transcript(tmp_path / "t.jsonl")
    stored = make_response('{"answer": 1}')
    transcript.record(request_digest(REQ), stored)
    gateway = Gateway(mode="replay", transcript=Transcript(tmp_path / "t.jsonl"))
    response = gateway.complete(REQ)
    assert response.text == stored.text
    assert response.output_tokens == stored.output_tokens


def test_replay_miss_names_digest(tmp_path):
    transcript = Transcript(tmp_path / "t.jsonl")
    gateway = Gateway(mode="replay", transcript=transcript)
    with pytest.raises(ReplayMissError) as exc:
        gateway.complete(REQ)
    assert exc.value.digest == request_digest(REQ)


def test_live_retries_then_succeeds():
    provider = FlakyProvider(failures=2)
    sleeps = []
    gateway = Gateway(mode="live", provider=provider, sleep=sleeps.append)
    response = gateway.complete(REQ)
    assert provider.calls == 3
    assert response.provider_meta["attempts"] == 3
    assert len(sleeps) == 2


def test_live_retries_exhausted():
    provider = FlakyProvider(failures=10)
    gateway = Gateway(mode="live", provider=provider, sleep=lambda s: None)
    with pytest.raises(RetriesExhaustedError) as exc:
        gateway.complete(REQ)
    assert exc.value.attempts == 4
    assert provider.calls == 4


def test_record_then_replay_round_trip(tmp_path):
    path = tmp_path / "t.jsonl"
    provider = ScriptedProvider(['{"x": 1}'])
    recorder = Gateway(mode="record", transcript=Transcript(path), provider=provider)
    recorded = recorder.complete(REQ)

    replayer = Gateway(mode="replay", transcript=Transcript(path))
    replayed = replayer.complete(REQ)
    assert replayed.text == recorded.text
    assert provider.calls == 1


def test_token_accounting_is_additive(tmp_path):
    provider = ScriptedProvider(['{"a": 1}', '{"b": 2}'])
    gateway = Gateway(mode="live", provider=provider)
    r1 = gateway.complete(REQ)
    r2 = gateway.complete(
        ChatRequest(model_id="openai/gpt-4o", system_text="sys", user_text="again")
    )
    expected = r1.input_tokens + r1.output_tokens + r2.input_tokens + r2.output_tokens
    assert gateway.total_tokens() == expected
    assert gateway.usage["openai/gpt-4o"].requests == 2


def test_unknown_model_id():
    with pytest.raises(UnknownModelError):
        provider_for_model("no-slash")
    with pytest.raises(UnknownModelError):
        provider_for_model("mystery/model")


def test_transcript_append_only(tmp_path):
    path = tmp_path / "t.jsonl"
    transcript = Transcript(path)
    transcript.record("d1", make_response("one"))
    transcript.record("d2", make_response("two"))
    transcript.record("d1", make_response("one-again"))  # ignored duplicate
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["request_digest"] == "d1"


def test_extract_structured_from_code_fence():
    text = 'Sure!\n```json\n{"fault_related": true, "rationale": "crash"}\n```'
    fields = extract_structured(text, {"fault_related", "rationale"})
    assert fields["fault_related"] is True


def test_extract_structured_ignores_trailing_prose():
    text = '{"fault_related": false, "rationale": "docs"} I hope this helps!'
    fields = extract_structured(text, {"fault_related"})
    assert fields["rationale"] == "docs"


def test_extract_structured_skips_broken_braces():
    text = "set {a} then {\"symptom\": \"Memory Leak\", \"root_cause\": \"Unknown\"}"
    fields = extract_structured(text, {"symptom", "root_cause"})
    assert fields["symptom"] == "Memory Leak"


def test_extract_structured_no_object():
    with pytest.raises(NoStructuredObjectError):
        extract_structured("no braces here at all")


def test_extract_structured_missing_field():
    with pytest.raises(MissingFieldsError) as exc:
        extract_structured('{"rationale": "x"}', {"fault_related"})
    assert exc.value.missing == ["fault_related"]


def test_response_serialization_round_trip():
    response = make_response("hello")
    assert ChatResponse.from_dict(response.to_dict()).to_dict() == response.to_dict()
