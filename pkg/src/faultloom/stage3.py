"""Stage III: taxonomy-anchored classification of fault-related issues into a
symptom leaf and a root-cause subcategory, with validation and repair."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .corpus import Corpus, IssueRecord
from .errors import StructuredOutputError, TaxonomyError
from .gateway import ChatRequest, Gateway, extract_structured
from .stage2 import DEFAULT_CHAR_BUDGET, DEFAULT_COMMENT_BUDGET
from .taxonomy import Taxonomy, TaxonomyNode, render_prompt_section, resolve_label

REPAIR_RETRIES = 2


@dataclass
class FaultLabel:
    repo: str
    number: int
    symptom_leaf: str | None
    root_cause: str | None
    rationale: str
    attempts: int
    valid: bool
    raw_output: str | None = None  # final raw model text, kept when invalid
    error: str | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.repo, self.number)

    def to_dict(self) -> dict:
        return {
            "repo": self.repo,
            "number": self.number,
            "symptom_leaf": self.symptom_leaf,
            "root_cause": self.root_cause,
            "rationale": self.rationale,
            "attempts": self.attempts,
            "valid": self.valid,
            "raw_output": self.raw_output,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FaultLabel":
        return cls(
            repo=str(raw["repo"]),
            number=int(raw["number"]),
            symptom_leaf=raw.get("symptom_leaf"),
            root_cause=raw.get("root_cause"),
            rationale=str(raw.get("rationale", "")),
            attempts=int(raw.get("attempts", 1)),
            valid=bool(raw["valid"]),
            raw_output=raw.get("raw_output"),
            error=raw.get("error"),
        )


def _issue_block(issue: IssueRecord) -> str:
    lines = [
        f"Issue: {issue.repo}#{issue.number}",
        f"Title: {issue.title}",
        "Body:",
        issue.body if issue.body.strip() else "(empty body)",
    ]
    if issue.comments:
        lines.append("Comments:")
        budget = DEFAULT_CHAR_BUDGET
        for comment in issue.comments[:DEFAULT_COMMENT_BUDGET]:
            body = comment.body[:budget]
            budget -= len(body)
            lines.append(f"- [{comment.author_role}] {body}")
            if budget <= 0:
                lines.append("[remaining comments truncated]")
                break
    return "\n".join(lines)


def build_classification_prompt(
    issue: IssueRecord,
    symptoms: Taxonomy,
    root_causes: Taxonomy,
    model_id: str,
) -> ChatRequest:
    """Deterministic prompt: both taxonomy outlines, exact-name selection
    instructions, the issue content, and the structured output contract."""
    user_text = (
        "Classify the software fault described by the issue below.\n\n"
        "Symptom taxonomy (choose exactly one leaf-level specific type, by "
        "exact name):\n"
        + render_prompt_section(symptoms)
        + "\nRoot-cause taxonomy (choose exactly one subcategory, by exact "
        "name; use \"Unknown\" only when the report gives no usable signal):\n"
        + render_prompt_section(root_causes)
        + "\n"
        + _issue_block(issue)
        + "\n\nRespond with a single JSON object: "
        '{"symptom": "<exact leaf name>", "root_cause": "<exact subcategory name>", '
        '"rationale": "..."}\n'
        "Return only the JSON object."
    )
    return ChatRequest(
        model_id=model_id,
        system_text=(
            "You are a software engineering researcher labeling fault reports "
            "against a fixed taxonomy."
        ),
        user_text=user_text,
    )


def _resolve_leaf(taxonomy: Taxonomy, label: str, what: str) -> TaxonomyNode:
    node = resolve_label(taxonomy, label)
    if not taxonomy.is_leaf_granularity(node):
        raise TaxonomyError(
            f"{what} label {label!r} names a level-{node.level} category, not a "
            f"leaf-granularity option"
        )
    return node


def classify(
    issue: IssueRecord,
    symptoms: Taxonomy,
    root_causes: Taxonomy,
    gateway: Gateway,
    model_id: str,
) -> FaultLabel:
    """Single-issue classification: 1 provider call plus up to 2 repair
    retries; on exhaustion the label is marked invalid, never coerced."""
    request = build_classification_prompt(issue, symptoms, root_causes, model_id)
    last_raw: str | None = None
    last_error: Exception | None = None
    for attempt in range(1, 2 + REPAIR_RETRIES):
        response = gateway.complete(request)
        last_raw = response.text
        try:
            fields = extract_structured(response.text, {"symptom", "root_cause"})
            symptom_node = _resolve_leaf(symptoms, str(fields["symptom"]), "symptom")
            root_cause_node = _resolve_leaf(root_causes, str(fields["root_cause"]), "root cause")
        except (StructuredOutputError, TaxonomyError) as exc:
            last_error = exc
            request = ChatRequest(
                model_id=request.model_id,
                system_text=request.system_text,
                user_text=(
                    request.user_text
                    + f"\n\nYour previous answer was rejected: {exc}. "
                    "Answer again with exact names from the taxonomies, as a "
                    "single JSON object."
                ),
            )
            continue
        return FaultLabel(
            repo=issue.repo, number=issue.number,
            symptom_leaf=symptom_node.id,
            root_cause=root_cause_node.id,
            rationale=str(fields.get("rationale", "")),
            attempts=attempt,
            valid=True,
        )
    return FaultLabel(
        repo=issue.repo, number=issue.number,
        symptom_leaf=None, root_cause=None,
        rationale="",
        attempts=1 + REPAIR_RETRIES,
        valid=False,
        raw_output=last_raw,
        error=str(last_error),
    )


def run_stage3(
    issues: Corpus,
    symptoms: Taxonomy,
    root_causes: Taxonomy,
    gateway: Gateway,
    model_id: str,
    parallelism: int = 1,
) -> list[FaultLabel]:
    """One label per issue, in input order, with per-issue fault isolation."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def _one(issue: IssueRecord) -> FaultLabel:
        try:
            return classify(issue, symptoms, root_causes, gateway, model_id)
        except Exception as exc:
            return FaultLabel(
                repo=issue.repo, number=issue.number,
                symptom_leaf=None, root_cause=None, rationale="",
                attempts=1, valid=False,
                error=f"{type(exc).__name__}: {exc}",
            )

    if parallelism == 1:
        return [_one(issue) for issue in issues]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_one, issues.records))
