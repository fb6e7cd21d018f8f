"""Test doubles: scripted/counting providers, a gold-answering provider, and
a canned HTTP transport."""

from __future__ import annotations

import json
import re

from faultloom.corpus import GoldLabel
from faultloom.errors import TransientProviderError
from faultloom.gateway import ChatRequest, ChatResponse
from faultloom.taxonomy import Taxonomy

ISSUE_KEY_RE = re.compile(r"Issue: (\S+)#(\d+)")


def make_response(text: str) -> ChatResponse:
    return ChatResponse(
        text=text,
        input_tokens=37,
        output_tokens=max(1, len(text) // 4),
        latency_ms=1.0,
    )


class ScriptedProvider:
    """Serves a fixed sequence of response texts; raises when exhausted."""

    def __init__(self, texts: list[str]):
        self.texts = list(texts)
        self.calls = 0
        self.requests: list[ChatRequest] = []

    def send(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        self.requests.append(request)
        if not self.texts:
            raise AssertionError("scripted provider exhausted")
        return make_response(self.texts.pop(0))


class FlakyProvider:
    """Fails transiently a given number of times, then succeeds."""

    def __init__(self, failures: int, text: str = '{"ok": true}'):
        self.failures = failures
        self.text = text
        self.calls = 0

    def send(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        if self.calls <= self.failures:
            raise TransientProviderError("rate limited")
        return make_response(self.text)


class CountingProvider:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def send(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        return self.inner.send(request)


class OracleProvider:
    """Answers every prompt with the gold label for the issue it names."""

    def __init__(
        self,
        gold: dict[tuple[str, int], GoldLabel],
        symptoms: Taxonomy,
        root_causes: Taxonomy,
        plan: dict | None = None,
    ):
        self.gold = gold
        self.symptoms = symptoms
        self.root_causes = root_causes
        self.plan = plan
        self.calls = 0

    def send(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        text = request.user_text
        match = ISSUE_KEY_RE.search(text)
        if '"symptom"' in text and match:
            label = self.gold[(match.group(1), int(match.group(2)))]
            return make_response(
                json.dumps(
                    {
                        "symptom": self.symptoms.node_by_id(label.symptom_leaf).name,
                        "root_cause": self.root_causes.node_by_id(label.root_cause).name,
                        "rationale": "matches the expert annotation",
                    }
                )
            )
        if '"fault_related"' in text and match:
            label = self.gold[(match.group(1), int(match.group(2)))]
            return make_response(
                json.dumps(
                    {
                        "fault_related": bool(label.fault_related),
                        "rationale": "matches the expert annotation",
                    }
                )
            )
        if '"projects"' in text and self.plan is not None:
            return make_response(json.dumps(self.plan))
        raise AssertionError(f"oracle cannot answer prompt: {text[:120]}")


class FakeTransport:
    """Serves canned responses keyed by URL; repeats the last entry."""

    def __init__(self, routes: dict[str, list[tuple[int, dict, str]]]):
        self.routes = {url: list(seq) for url, seq in routes.items()}
        self.calls = 0

    def __call__(self, url: str, headers: dict, params: dict) -> tuple[int, dict, str]:
        self.calls += 1
        if url not in self.routes:
            raise AssertionError(f"no canned response for {url}")
        seq = self.routes[url]
        return seq.pop(0) if len(seq) > 1 else seq[0]
